use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dwtsep::data;
use dwtsep::evaluation;
use dwtsep::model::{self, Model};
use dwtsep::training::{self, Checkpoint};
use dwtsep::{ModelConfig, ResamplerKind};

use crate::config::{read_kv, RunConfig};
use crate::error::{CliError, CliResult};

const DIAGNOSTIC_LEN: usize = 4096;
const DIAGNOSTIC_SEED: u64 = 0;

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.txt";

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_into(dir: Option<&Path>, name: &str, contents: &str) -> CliResult<()> {
    if let Some(dir) = dir {
        create_dir(dir)?;
        let path = dir.join(name);
        write_file(&path, contents)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn train(config: &Path) -> CliResult<()> {
    let run = RunConfig::load(config)?;
    let resolved = run.to_kv().to_text();
    log::info!("resolved config:\n{resolved}");
    create_dir(&run.output_dir)?;
    write_file(&run.output_dir.join(RESOLVED_CONFIG_FILE), &resolved)?;

    let splits = run.load_dataset()?;
    let model = Model::build(&run.model, run.train.seed)?;
    log::info!(
        "{} parameters; {} train / {} validation tracks",
        model.params().num_scalars(),
        splits.train.len(),
        splits.validation.len()
    );
    let outcome = training::train(model, &splits, &run.train)?;

    let ckpt_path = run.output_dir.join(CHECKPOINT_FILE);
    outcome.best.save(&ckpt_path)?;
    write_file(
        &run.output_dir.join(LOSS_FILE),
        &training::loss_curve_csv(&outcome.curve),
    )?;
    let initial = outcome.curve[0].val_loss;
    println!(
        "best validation loss {:.6e} at epoch {} ({}), initial {initial:.6e}",
        outcome.best.best_val_loss, outcome.best.epoch, outcome.best.phase
    );
    println!("wrote {}", run.output_dir.display());
    match outcome.aborted {
        Some(reason) => Err(CliError::Runtime(format!(
            "training aborted ({reason}); last good checkpoint is {}",
            ckpt_path.display()
        ))),
        None => Ok(()),
    }
}

/// Window output length used when running a checkpoint over whole tracks.
fn window_output_len(ckpt: &Checkpoint) -> CliResult<usize> {
    Ok(training::training_lengths(&ckpt.model_config, ckpt.train_config.segment_len)?.1)
}

pub fn separate(checkpoint: &Path, input: &Path, outdir: &Path) -> CliResult<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.model()?;
    let cfg = model.config();
    let (mixture, rate) = data::read_wav(input)?;
    if mixture.channels() != cfg.input_channels {
        return Err(CliError::usage(format!(
            "{} has {} channel(s); the model expects {}",
            input.display(),
            mixture.channels(),
            cfg.input_channels
        )));
    }
    let (min_len, _) = model::fit_lengths(cfg, 1)?;
    if mixture.time_len() < min_len {
        return Err(CliError::usage(format!(
            "{} has {} samples; minimum input length is {min_len}",
            input.display(),
            mixture.time_len()
        )));
    }
    let estimates = evaluation::separate_track(&model, &mixture, window_output_len(&ckpt)?)?;
    create_dir(outdir)?;
    for (i, est) in estimates.iter().enumerate() {
        let path = outdir.join(format!("source_{}.wav", i + 1));
        data::write_wav(&path, est, rate)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Accepts plain radians or multiples of pi such as `3pi/4` or `0.5pi`.
pub fn parse_probe(text: &str) -> Result<f64, String> {
    let t = text.trim().to_ascii_lowercase().replace([' ', '*'], "");
    let bad = || format!("cannot parse probe frequency `{text}`");
    let Some((coef, rest)) = t.split_once("pi") else {
        return t.parse().map_err(|_| bad());
    };
    let coef: f64 = if coef.is_empty() {
        1.0
    } else {
        coef.parse().map_err(|_| bad())?
    };
    let denom: f64 = match rest.strip_prefix('/') {
        Some(d) => d.parse().map_err(|_| bad())?,
        None if rest.is_empty() => 1.0,
        None => return Err(bad()),
    };
    Ok(coef * PI / denom)
}

/// Resamplers named on the command line: one kind or `all`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSelection(pub Vec<ResamplerKind>);

pub fn parse_layers(text: &str) -> Result<LayerSelection, String> {
    if text == "all" {
        return Ok(LayerSelection(ResamplerKind::ALL.to_vec()));
    }
    text.parse::<ResamplerKind>()
        .map(|k| LayerSelection(vec![k]))
        .map_err(|e| e.to_string())
}

pub fn diagnose(layers: &LayerSelection, probe: f64, outdir: Option<&Path>) -> CliResult<()> {
    let rows = layers
        .0
        .iter()
        .map(|&k| evaluation::layer_diagnostics(k, probe, DIAGNOSTIC_LEN, DIAGNOSTIC_SEED))
        .collect::<dwtsep::Result<Vec<_>>>()
        .map_err(|e| CliError::usage(e.to_string()))?;
    println!("probe {probe:.6} rad/sample, {DIAGNOSTIC_LEN} samples");
    println!(
        "{:<16} {:>12} {:>10} {:>12} {:>12}",
        "layer", "recon_err", "dc_gain", "alias_ratio", "shift_sens"
    );
    for d in &rows {
        println!(
            "{:<16} {:>12.3e} {:>10.6} {:>12.6} {:>12.6}",
            d.layer.name(),
            d.reconstruction_max_abs_error,
            d.passband_dc_gain,
            d.aliasing_energy_ratio,
            d.shift_sensitivity
        );
    }
    write_into(
        outdir,
        "diagnostics.csv",
        &evaluation::diagnostics_csv(&rows),
    )
}

fn layer_names(cfg: &ModelConfig) -> Vec<String> {
    let l = cfg.levels;
    (1..=l)
        .map(|i| format!("encoder_{i}"))
        .chain(std::iter::once("intermediate".to_string()))
        .chain((1..=l).rev().map(|i| format!("decoder_{i}")))
        .chain(std::iter::once("output".to_string()))
        .collect()
}

pub fn params(config: &Path, outdir: Option<&Path>) -> CliResult<()> {
    let cfg = ModelConfig::from_kv(&read_kv(config)?)?;
    let mut csv = String::from("layer,out_channels,in_channels,kernel,params\n");
    println!(
        "{:<14} {:>6} {:>6} {:>6} {:>12}",
        "layer", "out", "in", "kernel", "params"
    );
    for (name, (o, i, k)) in layer_names(&cfg).iter().zip(cfg.layer_shapes()) {
        let n = o * i * k + o;
        println!("{name:<14} {o:>6} {i:>6} {k:>6} {n:>12}");
        let _ = writeln!(csv, "{name},{o},{i},{k},{n}");
    }
    let total = model::count_params(&cfg);
    println!(
        "total {total} parameters ({:.2}M), weights and biases of every layer",
        total as f64 / 1e6
    );
    let _ = writeln!(csv, "total,,,,{total}");
    write_into(outdir, "params.csv", &csv)
}

pub fn evaluate(checkpoint: &Path, manifest: &Path, outdir: Option<&Path>) -> CliResult<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.model()?;
    let splits = data::load_manifest(manifest)?;
    if splits.test.is_empty() {
        return Err(CliError::usage(format!(
            "{} lists no test tracks",
            manifest.display()
        )));
    }
    let frame_len = splits.test[0].sample_rate as usize;
    let report =
        evaluation::evaluate_model(&model, &splits.test, frame_len, window_output_len(&ckpt)?)?;
    println!(
        "{:<24} {:>6} {:>12} {:>12} {:>7}",
        "track", "source", "median_sdr", "mean_sdr", "frames"
    );
    for r in &report.rows {
        println!(
            "{:<24} {:>6} {:>12.3} {:>12.3} {:>7}",
            r.track, r.source, r.metrics.median_sdr_db, r.metrics.mean_sdr_db, r.metrics.frames
        );
    }
    for s in &report.summary {
        println!(
            "source {}: median of track medians {:.3} dB, mean of track means {:.3} dB over {} track(s)",
            s.source, s.median_of_medians_db, s.mean_of_means_db, s.tracks
        );
    }
    write_into(outdir, "metrics.csv", &report.to_csv())
}
