//! WAV files, manifests and the synthetic generator.

mod common;

use dwtsep::data::{self, SynthSpec, PCM16_STEP};
use dwtsep::FeatureMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

#[test]
fn wav_round_trip_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("noise.wav");
    let mut rng = common::rng(1);
    let map = common::random_map(&mut rng, 1000, 2);
    data::write_wav(&path, &map, 8000).unwrap();
    let (back, rate) = data::read_wav(&path).unwrap();
    assert_eq!(rate, 8000);
    assert_eq!(back.shape(), (1000, 2));
    assert!(back.max_abs_diff(&map).unwrap() <= PCM16_STEP);
}

#[test]
fn zero_signal_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zero.wav");
    let map = FeatureMap::zeros(64, 1).unwrap();
    data::write_wav(&path, &map, 22050).unwrap();
    assert_eq!(data::read_wav(&path).unwrap().0, map);
}

#[test]
fn stereo_channel_zero_is_first_interleaved_sample() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stereo.wav");
    let spec = hound_spec(2);
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for s in [100i16, -200, 300, -400] {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
    let (map, _) = data::read_wav(&path).unwrap();
    assert_eq!(map.shape(), (2, 2));
    assert_eq!(map.get(0, 0), 100.0 / 32768.0);
    assert_eq!(map.get(0, 1), -200.0 / 32768.0);
    assert_eq!(map.get(1, 0), 300.0 / 32768.0);
}

fn hound_spec(channels: u16) -> hound::WavSpec {
    hound::WavSpec {
        channels,
        sample_rate: 8000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

#[test]
fn out_of_range_samples_are_clamped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loud.wav");
    let map = FeatureMap::from_mono(&[2.0, -2.0, 1.0]).unwrap();
    data::write_wav(&path, &map, 8000).unwrap();
    let (back, _) = data::read_wav(&path).unwrap();
    assert_eq!(
        back.channel(0),
        vec![32767.0 / 32768.0, -1.0, 32767.0 / 32768.0]
    );
}

#[test]
fn writing_twice_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let map = common::random_map(&mut common::rng(2), 333, 1);
    let (a, b) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
    data::write_wav(&a, &map, 8000).unwrap();
    data::write_wav(&b, &map, 8000).unwrap();
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn unsupported_encodings_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("float.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 8000,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    w.write_sample(0.5f32).unwrap();
    w.finalize().unwrap();
    assert!(data::read_wav(&path).is_err());

    let junk = dir.path().join("junk.wav");
    fs::write(&junk, b"not a wav file").unwrap();
    assert!(data::read_wav(&junk).is_err());
    assert!(data::read_wav(dir.path().join("missing.wav")).is_err());
}

/// Writes a track with `n` sources whose mixture is their exact sum in the
/// integer domain.
fn write_track(dir: &Path, name: &str, n: usize, len: usize) -> String {
    let mut fields = vec![format!("{name}_mix.wav")];
    let mut mix = vec![0i32; len];
    for s in 0..n {
        let file = format!("{name}_s{s}.wav");
        let mut w = hound::WavWriter::create(dir.join(&file), hound_spec(1)).unwrap();
        for (t, m) in mix.iter_mut().enumerate() {
            let v = ((t * 37 + s * 101) % 2000) as i32 - 1000;
            *m += v;
            w.write_sample(v as i16).unwrap();
        }
        w.finalize().unwrap();
        fields.push(file);
    }
    let mut w = hound::WavWriter::create(dir.join(&fields[0]), hound_spec(1)).unwrap();
    for v in mix {
        w.write_sample(v as i16).unwrap();
    }
    w.finalize().unwrap();
    fields.join("\t")
}

#[test]
fn empty_manifest_gives_empty_splits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tsv");
    fs::write(&path, "# nothing here\n\n").unwrap();
    let splits = data::load_manifest(&path).unwrap();
    assert!(splits.train.is_empty() && splits.validation.is_empty() && splits.test.is_empty());
}

#[test]
fn four_source_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for (split, name) in [
        ("train", "a"),
        ("train", "b"),
        ("valid", "c"),
        ("test", "d"),
    ] {
        text += &format!(
            "{split}\t{name}\t{}\n",
            write_track(dir.path(), name, 4, 50)
        );
    }
    let path = dir.path().join("m.tsv");
    fs::write(&path, text).unwrap();
    let splits = data::load_manifest(&path).unwrap();
    assert_eq!(
        (
            splits.train.len(),
            splits.validation.len(),
            splits.test.len()
        ),
        (2, 1, 1)
    );
    let all: Vec<_> = splits
        .train
        .iter()
        .chain(&splits.validation)
        .chain(&splits.test)
        .collect();
    assert_eq!(all.len(), 4);
    assert!(all
        .iter()
        .all(|t| t.num_sources() == 4 && t.len() == 50 && t.sample_rate == 8000));
    assert_eq!(splits.validation[0].name, "c");
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_track(dir.path(), "a", 2, 20);
    let b = write_track(dir.path(), "b", 3, 20);
    let cases = [
        (format!("train\ta\t{a}\ntest\ta\t{a}\n"), "duplicate"),
        (format!("train\ta\t{a}\ntrain\tb\t{b}\n"), "sources"),
        (format!("holdout\ta\t{a}\n"), "unknown split"),
        (
            "train\tx\tmissing.wav\tmissing2.wav\n".to_string(),
            "missing.wav",
        ),
        ("train\tx\tonly.wav\n".to_string(), "field"),
    ];
    for (text, needle) in cases {
        let path = dir.path().join("m.tsv");
        fs::write(&path, &text).unwrap();
        let err = data::load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains(needle), "{needle}: {err}");
    }
}

#[test]
fn non_additive_track_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_track(dir.path(), "a", 2, 20);
    // swap in a different file as the mixture
    let bad = a.replacen("a_mix.wav", "a_s0.wav", 1);
    let path = dir.path().join("m.tsv");
    fs::write(&path, format!("train\ta\t{bad}\n")).unwrap();
    assert!(data::load_manifest(&path)
        .unwrap_err()
        .to_string()
        .contains("sum of sources"));
}

fn synth(seed: u64) -> Vec<data::Track> {
    data::generate_synth(&SynthSpec {
        num_tracks: 3,
        duration_samples: 8000,
        sample_rate: 8000,
        seed,
    })
    .unwrap()
}

#[test]
fn synth_is_deterministic_and_additive() {
    let a = synth(5);
    assert_eq!(a, synth(5));
    assert_ne!(a, synth(6));
    for t in &a {
        assert_eq!(t.num_sources(), 2);
        assert_eq!(data::additivity_error(&t.mixture, &t.sources), 0.0);
    }
}

/// Fraction of energy below `cutoff_hz`, by a direct DFT over bins 0..=T/2.
fn low_band_fraction(x: &[f64], rate: f64, cutoff_hz: f64) -> f64 {
    let n = x.len();
    let (mut low, mut total) = (0.0, 0.0);
    for k in 0..=n / 2 {
        let w = 2.0 * PI * k as f64 / n as f64;
        let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
            (re + v * (w * t as f64).cos(), im - v * (w * t as f64).sin())
        });
        let e = re * re + im * im;
        total += e;
        if (k as f64) * rate / (n as f64) < cutoff_hz {
            low += e;
        }
    }
    low / total
}

#[test]
fn tone_source_is_low_frequency() {
    let tracks = data::generate_synth(&SynthSpec {
        num_tracks: 3,
        duration_samples: 2048,
        sample_rate: 8000,
        seed: 9,
    })
    .unwrap();
    for t in &tracks {
        let frac = low_band_fraction(&t.sources[0].channel(0), 8000.0, 1600.0);
        assert!(frac >= 0.9, "{}: {frac}", t.name);
    }
}

#[test]
fn invalid_synth_spec_is_rejected() {
    let spec = SynthSpec {
        num_tracks: 0,
        duration_samples: 100,
        sample_rate: 8000,
        seed: 0,
    };
    assert!(data::generate_synth(&spec).is_err());
}
