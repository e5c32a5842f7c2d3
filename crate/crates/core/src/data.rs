//! Audio tracks: PCM WAV I/O, dataset manifests and a synthetic two-source
//! dataset for small-scale experiments.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::FeatureMap;
use crate::{Error, Result};

const PCM_SCALE: f64 = 32768.0;

/// One quantization step of 16-bit PCM in float units.
pub const PCM16_STEP: f64 = 1.0 / PCM_SCALE;

/// Per-source stems and their mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub name: String,
    pub sample_rate: u32,
    pub mixture: FeatureMap,
    pub sources: Vec<FeatureMap>,
}

impl Track {
    /// Builds a track, checking that all stems share the mixture's shape and
    /// that the mixture equals their sum within `tolerance` per sample.
    pub fn new(
        name: impl Into<String>,
        sample_rate: u32,
        mixture: FeatureMap,
        sources: Vec<FeatureMap>,
        tolerance: f64,
    ) -> Result<Self> {
        let name = name.into();
        if sources.is_empty() {
            return Err(Error::invalid(format!("track `{name}` has no sources")));
        }
        for (i, s) in sources.iter().enumerate() {
            if s.shape() != mixture.shape() {
                return Err(Error::invalid(format!(
                    "track `{name}`: source {} is {}x{}, mixture is {}x{}",
                    i + 1,
                    s.time_len(),
                    s.channels(),
                    mixture.time_len(),
                    mixture.channels()
                )));
            }
        }
        let err = additivity_error(&mixture, &sources);
        if err > tolerance {
            return Err(Error::invalid(format!(
                "track `{name}`: mixture differs from the sum of sources by {err:.3e} (tolerance {tolerance:.3e})"
            )));
        }
        Ok(Self {
            name,
            sample_rate,
            mixture,
            sources,
        })
    }

    pub fn len(&self) -> usize {
        self.mixture.time_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> usize {
        self.mixture.channels()
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }
}

/// `max |mixture - sum(sources)|` over all samples.
pub fn additivity_error(mixture: &FeatureMap, sources: &[FeatureMap]) -> f64 {
    let mut worst = 0.0f64;
    for (i, &m) in mixture.data().iter().enumerate() {
        let sum: f64 = sources.iter().map(|s| s.data()[i]).sum();
        worst = worst.max((m - sum).abs());
    }
    worst
}

/// Reads a 16-bit PCM WAV file (1 or 2 channels) scaled to `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(FeatureMap, u32)> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "unsupported encoding {:?} {}-bit; only 16-bit PCM is read",
                spec.sample_format, spec.bits_per_sample
            ),
        });
    }
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{} channels; only mono and stereo are read", spec.channels),
        });
    }
    let channels = spec.channels as usize;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    if samples.is_empty() || samples.len() % channels != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{} samples for {channels} channel(s)", samples.len()),
        });
    }
    let map = FeatureMap::from_vec(samples.len() / channels, channels, samples)?;
    Ok((map, spec.sample_rate))
}

/// Writes a map as 16-bit PCM, rounding to nearest and clamping.
pub fn write_wav(path: impl AsRef<Path>, map: &FeatureMap, sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    if !(1..=2).contains(&map.channels()) {
        return Err(Error::invalid(format!(
            "write_wav supports 1 or 2 channels, got {}",
            map.channels()
        )));
    }
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: map.channels() as u16,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &v in map.data() {
        let q = (v * PCM_SCALE).round().clamp(-PCM_SCALE, PCM_SCALE - 1.0) as i16;
        writer.write_sample(q).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Train / validation / test track lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<Track>,
    pub validation: Vec<Track>,
    pub test: Vec<Track>,
}

/// Loads a tab-separated manifest:
/// `split<TAB>name<TAB>mixture.wav<TAB>source1.wav<TAB>...`.
///
/// Relative paths resolve against the manifest's directory. Split names are
/// `train`, `valid`/`validation` and `test`; `#` starts a comment line.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetSplits> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let format_err = |line: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };

    let mut splits = DatasetSplits::default();
    let mut names = HashSet::new();
    let mut num_sources = None;
    let mut sample_rate = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(format_err(
                lineno,
                format!(
                    "expected split, name, mixture and at least one source, got {} field(s)",
                    fields.len()
                ),
            ));
        }
        let (split, name) = (fields[0], fields[1]);
        if !names.insert(name.to_string()) {
            return Err(format_err(lineno, format!("duplicate track name `{name}`")));
        }
        let n = fields.len() - 3;
        match num_sources {
            None => num_sources = Some(n),
            Some(expected) if expected != n => {
                return Err(format_err(
                    lineno,
                    format!("track `{name}` lists {n} sources, earlier tracks list {expected}"),
                ))
            }
            Some(_) => {}
        }
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let (mixture, rate) = read_wav(resolve(fields[2]))?;
        match sample_rate {
            None => sample_rate = Some(rate),
            Some(r) if r != rate => {
                return Err(format_err(
                    lineno,
                    format!("track `{name}` is at {rate} Hz, earlier tracks at {r} Hz"),
                ))
            }
            Some(_) => {}
        }
        let mut sources = Vec::with_capacity(n);
        for f in &fields[3..] {
            let (s, r) = read_wav(resolve(f))?;
            if r != rate {
                return Err(format_err(
                    lineno,
                    format!("source `{f}` is at {r} Hz, mixture at {rate} Hz"),
                ));
            }
            sources.push(s);
        }
        // each file carries up to half a step of rounding error
        let tol = (n + 1) as f64 * 0.5 * PCM16_STEP + 1e-12;
        let track = Track::new(name, rate, mixture, sources, tol)
            .map_err(|e| format_err(lineno, e.to_string()))?;
        match split {
            "train" => splits.train.push(track),
            "valid" | "validation" => splits.validation.push(track),
            "test" => splits.test.push(track),
            other => return Err(format_err(lineno, format!("unknown split `{other}`"))),
        }
    }
    Ok(splits)
}

/// Recipe for the synthetic dataset.
///
/// Source 1 is a sequence of harmonic notes (fundamental uniform in
/// 60-400 Hz, three partials, attack/decay envelope); source 2 is white
/// noise smoothed by a 4-tap moving average. Both are mono.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_tracks: usize,
    pub duration_samples: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_tracks == 0 || self.duration_samples < 2 || self.sample_rate == 0 {
            return Err(Error::config(format!(
                "synthetic dataset needs tracks, samples and a rate > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn generate_synth(spec: &SynthSpec) -> Result<Vec<Track>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.num_tracks)
        .map(|i| {
            let tone = harmonic_notes(&mut rng, spec.duration_samples, spec.sample_rate);
            let noise = smoothed_noise(&mut rng, spec.duration_samples);
            let mixture: Vec<f64> = tone.iter().zip(&noise).map(|(a, b)| a + b).collect();
            Track::new(
                format!("synth_{i:03}"),
                spec.sample_rate,
                FeatureMap::from_mono(&mixture)?,
                vec![
                    FeatureMap::from_mono(&tone)?,
                    FeatureMap::from_mono(&noise)?,
                ],
                0.0,
            )
        })
        .collect()
}

fn harmonic_notes(rng: &mut ChaCha8Rng, len: usize, rate: u32) -> Vec<f64> {
    let fs = f64::from(rate);
    let fade = ((0.01 * fs) as usize).max(1);
    let mut out = vec![0.0; len];
    let mut start = 0;
    while start < len {
        let note_len = ((rng.gen_range(0.2..0.8) * fs) as usize).max(2 * fade + 1);
        let end = (start + note_len).min(len);
        let f0 = rng.gen_range(60.0..400.0);
        let level = rng.gen_range(0.1..0.3);
        let decay = rng.gen_range(1.0..4.0);
        let partials: Vec<(f64, f64)> = (1..=3)
            .map(|k| {
                (
                    rng.gen_range(0.5..1.0) / k as f64,
                    rng.gen_range(0.0..2.0 * PI),
                )
            })
            .collect();
        let n = end - start;
        for i in 0..n {
            let t = i as f64 / fs;
            let attack = ((i + 1) as f64 / fade as f64).min(1.0);
            let release = ((n - i) as f64 / fade as f64).min(1.0);
            let env = level * attack * release * (-decay * t).exp();
            let value: f64 = partials
                .iter()
                .enumerate()
                .map(|(k, (amp, phase))| amp * (2.0 * PI * f0 * (k + 1) as f64 * t + phase).sin())
                .sum();
            out[start + i] = env * value;
        }
        start = end;
    }
    out
}

fn smoothed_noise(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let gain = rng.gen_range(0.1..0.3);
    let white: Vec<f64> = (0..len + 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    white
        .windows(4)
        .map(|w| gain * w.iter().sum::<f64>() / 4.0)
        .collect()
}
