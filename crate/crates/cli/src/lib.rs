//! Command-line front end for the `dwtsep` separation library.

pub mod commands;
pub mod config;
mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "dwtsep",
    version,
    about = "Train, run and inspect wavelet-resampling separation models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a run config; writes the best checkpoint, the loss
    /// curve and the resolved config into `output_dir`.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Separate a WAV file into `source_1.wav` ... `source_N.wav`.
    Separate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Reconstruction, aliasing and shift diagnostics for resampling layers.
    Diagnose {
        /// A resampler kind or `all`.
        #[arg(long, value_parser = commands::parse_layers)]
        layer: commands::LayerSelection,
        /// Probe frequency in radians per sample, e.g. `2.356` or `3pi/4`.
        #[arg(long, value_parser = commands::parse_probe, allow_hyphen_values = true)]
        probe: f64,
        /// Also write `diagnostics.csv` here.
        #[arg(long)]
        outdir: Option<PathBuf>,
    },
    /// Per-layer and total parameter counts for the model in a config.
    Params {
        #[arg(long)]
        config: PathBuf,
        /// Also write `params.csv` here.
        #[arg(long)]
        outdir: Option<PathBuf>,
    },
    /// Frame-wise SDR of a checkpoint on the test split of a manifest.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Also write `metrics.csv` here.
        #[arg(long)]
        outdir: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config } => commands::train(&config),
        Command::Separate {
            checkpoint,
            input,
            outdir,
        } => commands::separate(&checkpoint, &input, &outdir),
        Command::Diagnose {
            layer,
            probe,
            outdir,
        } => commands::diagnose(&layer, probe, outdir.as_deref()),
        Command::Params { config, outdir } => commands::params(&config, outdir.as_deref()),
        Command::Evaluate {
            checkpoint,
            manifest,
            outdir,
        } => commands::evaluate(&checkpoint, &manifest, outdir.as_deref()),
    }
}
