//! Time-frequency GAN speech enhancer with discriminative conditioning.
//!
//! The crate implements the full pipeline: dataset synthesis, a frozen
//! discriminative enhancer whose bottleneck latents condition a GAN
//! generator through masked cross-attention, multi-resolution spectral and
//! adversarial losses, two-stage training, enhancement chains, and an
//! SNR-family evaluation suite. Everything runs on CPU in f64 and is
//! bit-reproducible for a fixed seed.

pub mod adversary;
pub mod audio;
pub mod blocks;
pub mod chain;
pub mod checkpoint;
pub mod cli;
pub mod conditioner;
pub mod config;
pub mod datagen;
pub mod discmodel;
pub mod dsp;
pub mod error;
pub mod gan;
pub mod generator;
pub mod losses;
pub mod metrics;
pub mod spectral;
pub mod trainer;

pub use audio::{read_wav, write_wav, AudioClip, WavFormat};
pub use error::{DiscoganError, Result};
