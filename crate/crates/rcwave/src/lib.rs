//! A desk-scale GAN vocoder built around two ideas: a generator whose
//! top resolution stages each emit a waveform that is nearest-neighbor
//! upsampled and summed into the output, and period/scale discriminator
//! ensembles that receive lossless Haar-wavelet downsampled audio at
//! resolution-matched layers instead of aliasing average-pooled audio.
//!
//! Everything runs in `f64` on a single thread through a small
//! reverse-mode tape, so training trajectories are bit-reproducible and
//! every gradient can be checked against central differences.

pub mod cli;
pub mod config;
pub mod discriminators;
pub mod error;
pub mod evalsuite;
pub mod generator;
pub mod nn;
pub mod objectives;
pub mod plot;
pub mod spectral;
pub mod trainer;
pub mod wavelet;

pub use discriminators::{DiscriminatorConfig, Discriminators};
pub use error::{Error, Result};
pub use generator::{Generator, GeneratorConfig};
pub use objectives::{LossReport, LossWeights};
pub use spectral::AudioBuffer;
pub use trainer::{TrainConfig, Trainer};
