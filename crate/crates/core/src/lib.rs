//! Entropic optimal transport and Sinkhorn-regularized adversarial
//! training for guided DEM super-resolution.
//!
//! - [`ot`]: log-domain Sinkhorn, debiased Sinkhorn divergence, envelope
//!   gradients and exact small-instance oracles.
//! - [`diffnet`]: a small reverse-mode engine (convolutions, dense layers,
//!   Adam, gradient checks, spectral-norm probes).
//! - [`losses`]: pixel, SSIM, adversarial, domain-adaptation and batch
//!   Sinkhorn objectives with analytic gradients.
//! - [`model`]: DMRB generator/discriminator, discriminator spatial
//!   attention, PSA and the adversarial training step.
//! - [`data`]: IDX reader, synthetic terrain, raster formats and metrics.
//! - [`experiments`]: denoising, epsilon sweeps, baselines, toy
//!   super-resolution ablations and the smoothness probe.

pub mod data;
pub mod diffnet;
mod error;
pub mod experiments;
pub mod losses;
pub mod model;
pub mod ot;

pub use error::{Error, Result};
