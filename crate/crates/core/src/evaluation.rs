//! Separation metrics and resampling-layer diagnostics.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Track;
use crate::model::{fit_lengths, Model};
use crate::resampling::ResamplerKind;
use crate::tensor::{crop_offset, FeatureMap};
use crate::{Error, Result};

/// Frames whose reference energy falls below this are skipped.
pub const SILENT_FRAME_ENERGY: f64 = 1e-12;
/// Upper clamp for per-frame SDR, applied to exact matches as well.
pub const MAX_SDR_DB: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationMetrics {
    pub median_sdr_db: f64,
    pub mean_sdr_db: f64,
    pub frames: usize,
    pub skipped: usize,
    pub frame_sdrs: Vec<f64>,
}

/// Frame-wise SDR, `10 log10(sum ref^2 / sum (ref - est)^2)`, over
/// non-overlapping frames of `frame_len` samples (the last frame may be
/// shorter). All channels of a frame are pooled.
pub fn sdr_frames(
    est: &FeatureMap,
    reference: &FeatureMap,
    frame_len: usize,
) -> Result<SeparationMetrics> {
    if est.shape() != reference.shape() {
        return Err(Error::invalid(format!(
            "sdr_frames: estimate is {}x{}, reference is {}x{}",
            est.time_len(),
            est.channels(),
            reference.time_len(),
            reference.channels()
        )));
    }
    if frame_len == 0 {
        return Err(Error::invalid("frame length must be positive"));
    }
    let c = est.channels();
    let mut sdrs = Vec::new();
    let mut skipped = 0;
    let mut start = 0;
    while start < est.time_len() {
        let end = (start + frame_len).min(est.time_len());
        let r = &reference.data()[start * c..end * c];
        let e = &est.data()[start * c..end * c];
        let signal: f64 = r.iter().map(|v| v * v).sum();
        if signal < SILENT_FRAME_ENERGY {
            skipped += 1;
        } else {
            let noise: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
            let sdr = if noise == 0.0 {
                MAX_SDR_DB
            } else {
                (10.0 * (signal / noise).log10()).min(MAX_SDR_DB)
            };
            sdrs.push(sdr);
        }
        start = end;
    }
    if sdrs.is_empty() {
        return Err(Error::invalid("no active frames"));
    }
    Ok(SeparationMetrics {
        median_sdr_db: median(&sdrs),
        mean_sdr_db: sdrs.iter().sum::<f64>() / sdrs.len() as f64,
        frames: sdrs.len(),
        skipped,
        frame_sdrs: sdrs,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Properties of a down/up-sampling pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDiagnostics {
    pub layer: ResamplerKind,
    /// `max |up(down(z)) - z|` over a random map, on the samples `up` returns.
    pub reconstruction_max_abs_error: f64,
    /// Mean of the retained band for a constant unit input.
    pub passband_dc_gain: f64,
    /// `(tone amplitude in the retained band / DC gain)^2` for `cos(w n)`.
    pub aliasing_energy_ratio: f64,
    /// `||band(x shifted by one) - band(x)|| / ||band(x)||` for random `x`.
    /// Comparative only; it is nonzero even for ideal filters.
    pub shift_sensitivity: f64,
}

/// The low-pass / retained half of a down-sampled map: the approximation
/// channels for DWT kinds, everything otherwise.
fn retained_band(kind: ResamplerKind, down: &FeatureMap) -> Result<FeatureMap> {
    if kind.channel_factor() == 2 {
        let c = down.channels() / 2;
        down.select_channels(c, c)
    } else {
        Ok(down.clone())
    }
}

/// Amplitude of a real sinusoid at `freq` (radians/sample) in `x`, estimated
/// with a Hann-windowed single-bin DFT.
fn tone_amplitude(x: &[f64], freq: f64) -> f64 {
    let n = x.len();
    let (mut re, mut im, mut wsum) = (0.0, 0.0, 0.0);
    for (m, &v) in x.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * PI * m as f64 / n as f64).cos();
        re += w * v * (freq * m as f64).cos();
        im -= w * v * (freq * m as f64).sin();
        wsum += w;
    }
    let mag = (re * re + im * im).sqrt() / wsum;
    let edge = 1e-9;
    if freq < edge || (PI - freq) < edge {
        mag
    } else {
        2.0 * mag
    }
}

/// Measures reconstruction, DC gain, aliasing at `probe_freq` and one-sample
/// shift sensitivity for a resampling pair.
pub fn layer_diagnostics(
    kind: ResamplerKind,
    probe_freq: f64,
    time_len: usize,
    seed: u64,
) -> Result<LayerDiagnostics> {
    if !(probe_freq > 0.0 && probe_freq < PI) {
        return Err(Error::invalid(format!(
            "probe frequency must lie in (0, pi), got {probe_freq}"
        )));
    }
    if time_len < 256 || !time_len.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "diagnostic length must be even and at least 256, got {time_len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = 2;

    let z = FeatureMap::from_fn(time_len, channels, |_, _| rng.gen_range(-1.0..1.0))?;
    let back = kind.up(&kind.down(&z)?)?;
    let common = back.time_len().min(time_len);
    let reconstruction_max_abs_error = back
        .slice_time(0, common)?
        .max_abs_diff(&z.slice_time(0, common)?)?;

    let ones = FeatureMap::from_vec(time_len, 1, vec![1.0; time_len])?;
    let dc_band = retained_band(kind, &kind.down(&ones)?)?;
    let passband_dc_gain = dc_band.data().iter().sum::<f64>() / dc_band.data().len() as f64;

    let tone = FeatureMap::from_fn(time_len, 1, |t, _| (probe_freq * t as f64).cos())?;
    let band = retained_band(kind, &kind.down(&tone)?)?;
    let mut folded = (2.0 * probe_freq).rem_euclid(2.0 * PI);
    if folded > PI {
        folded = 2.0 * PI - folded;
    }
    let amp = tone_amplitude(band.data(), folded);
    let aliasing_energy_ratio = (amp / passband_dc_gain).powi(2);

    let long = FeatureMap::from_fn(time_len + 1, 1, |_, _| rng.gen_range(-1.0..1.0))?;
    let base = retained_band(kind, &kind.down(&long.slice_time(0, time_len)?)?)?;
    let shifted = retained_band(kind, &kind.down(&long.slice_time(1, time_len)?)?)?;
    let shift_sensitivity = (shifted.sub(&base)?.sum_squares() / base.sum_squares()).sqrt();

    Ok(LayerDiagnostics {
        layer: kind,
        reconstruction_max_abs_error,
        passband_dc_gain,
        aliasing_energy_ratio,
        shift_sensitivity,
    })
}

pub fn diagnostics_csv(rows: &[LayerDiagnostics]) -> String {
    let mut out = String::from("layer,recon_err,dc_gain,alias_ratio,shift_sens\n");
    for d in rows {
        let _ = writeln!(
            out,
            "{},{:e},{},{},{}",
            d.layer,
            d.reconstruction_max_abs_error,
            d.passband_dc_gain,
            d.aliasing_energy_ratio,
            d.shift_sensitivity
        );
    }
    out
}

/// Runs the model over a whole mixture in consecutive windows whose outputs
/// tile the track exactly. The track is zero-padded so every sample is
/// covered; returns `N` maps with the mixture's length.
pub fn separate_track(
    model: &Model,
    mixture: &FeatureMap,
    output_len: usize,
) -> Result<Vec<FeatureMap>> {
    let cfg = model.config();
    let (in_len, out_len) = fit_lengths(cfg, output_len)?;
    let (t, c) = mixture.shape();
    let front = crop_offset(in_len, out_len);
    let windows = t.div_ceil(out_len);
    let padded_len = windows * out_len + (in_len - out_len);
    let mut padded = vec![0.0; padded_len * c];
    padded[front * c..(front + t) * c].copy_from_slice(mixture.data());
    let padded = FeatureMap::from_vec(padded_len, c, padded)?;

    let mut stitched: Vec<Vec<f64>> =
        vec![Vec::with_capacity(windows * out_len * c); cfg.num_sources];
    for w in 0..windows {
        let input = padded.slice_time(w * out_len, in_len)?;
        let outputs = model.separate(&input)?;
        for (dst, src) in stitched.iter_mut().zip(&outputs) {
            dst.extend_from_slice(src.data());
        }
    }
    stitched
        .into_iter()
        .map(|mut data| {
            data.truncate(t * c);
            FeatureMap::from_vec(t, c, data)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSourceMetrics {
    pub track: String,
    /// 1-based source index.
    pub source: usize,
    pub metrics: SeparationMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSummary {
    pub source: usize,
    pub median_of_medians_db: f64,
    pub mean_of_means_db: f64,
    pub tracks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<TrackSourceMetrics>,
    pub summary: Vec<SourceSummary>,
}

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("track,source,median_sdr_db,mean_sdr_db,frames,skipped\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.track,
                r.source,
                r.metrics.median_sdr_db,
                r.metrics.mean_sdr_db,
                r.metrics.frames,
                r.metrics.skipped
            );
        }
        out
    }
}

/// Separates every track and scores each source with [`sdr_frames`].
///
/// Tracks whose shape does not fit the model and (track, source) pairs
/// without active frames are skipped with a warning.
pub fn evaluate_model(
    model: &Model,
    tracks: &[Track],
    frame_len: usize,
    output_len: usize,
) -> Result<EvaluationReport> {
    if tracks.is_empty() {
        return Err(Error::invalid("no tracks to evaluate"));
    }
    let cfg = model.config();
    let mut rows = Vec::new();
    for track in tracks {
        if track.channels() != cfg.input_channels || track.num_sources() != cfg.num_sources {
            log::warn!(
                "skipping track `{}`: {} channel(s) / {} source(s), model expects {} / {}",
                track.name,
                track.channels(),
                track.num_sources(),
                cfg.input_channels,
                cfg.num_sources
            );
            continue;
        }
        let estimates = separate_track(model, &track.mixture, output_len)?;
        for (i, (est, reference)) in estimates.iter().zip(&track.sources).enumerate() {
            match sdr_frames(est, reference, frame_len) {
                Ok(metrics) => rows.push(TrackSourceMetrics {
                    track: track.name.clone(),
                    source: i + 1,
                    metrics,
                }),
                Err(e) => log::warn!("skipping track `{}` source {}: {e}", track.name, i + 1),
            }
        }
    }
    let summary = (1..=cfg.num_sources)
        .filter_map(|source| {
            let of_source: Vec<_> = rows.iter().filter(|r| r.source == source).collect();
            if of_source.is_empty() {
                return None;
            }
            let medians: Vec<f64> = of_source.iter().map(|r| r.metrics.median_sdr_db).collect();
            let means: Vec<f64> = of_source.iter().map(|r| r.metrics.mean_sdr_db).collect();
            Some(SourceSummary {
                source,
                median_of_medians_db: median(&medians),
                mean_of_means_db: means.iter().sum::<f64>() / means.len() as f64,
                tracks: of_source.len(),
            })
        })
        .collect();
    Ok(EvaluationReport { rows, summary })
}
