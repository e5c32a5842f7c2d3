//! Time-domain source separation with wavelet resampling layers.
//!
//! The crate contains a small encoder-decoder separation network in the
//! Wave-U-Net family whose down-sampling and up-sampling layers are
//! pluggable. The default pair is a lifting-scheme Haar DWT and its inverse,
//! which is both anti-aliasing and perfectly reconstructing; decimation,
//! average pooling and squeezing baselines are provided for comparison.
//!
//! All numerics run in `f64` with hand-written reverse-mode gradients, so
//! every layer can be checked against finite differences.
//!
//! Modules:
//! - [`tensor`]: feature maps, valid convolution, activations and their adjoints
//! - [`resampling`]: DWT / inverse DWT and the baseline resamplers
//! - [`model`]: the encoder-decoder network and its parameter bookkeeping
//! - [`training`]: batch sampling, Adam, early stopping and checkpoints
//! - [`data`]: WAV I/O, dataset manifests and the synthetic dataset
//! - [`evaluation`]: frame-wise SDR and resampling-layer diagnostics

pub mod data;
mod error;
pub mod evaluation;
pub mod kv;
pub mod model;
pub mod resampling;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use resampling::{LiftingWavelet, ResamplerKind};
pub use tensor::{ConvParams, FeatureMap};
