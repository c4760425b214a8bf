//! Score-based diffusion posterior sampling for accelerated MRI.
//!
//! A denoising score network is trained on magnitude images and then used,
//! together with a data-consistency projection onto the measured k-space, to
//! draw reconstructions from the posterior of an undersampled acquisition.

pub mod error;
pub mod grid;
pub mod measurement;
pub mod metrics;
pub mod sampler;
pub mod schedule;
pub mod score;

pub use error::{Error, Result};
