//! Denoising, epsilon sweeps, baselines, toy super-resolution and the
//! smoothness probe. Every run is a pure function of its config.

mod config;
mod denoise;
mod smoothness;
mod sr;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use config::{ExperimentConfig, ExperimentKind, Method};
pub use denoise::{
    add_noise, clip_params, denoise_discriminator, denoise_generator, denoise_predict, gradient_penalty,
    near_optimal_mean, near_optimal_window, run_baselines, run_denoise, run_eps_sweep, sweep_entry, train_denoise,
    DenoiseData, DenoiseOutcome, SweepEntry, SweepResult, FIRST_LAYER, HIDDEN_LAYER,
};
pub use smoothness::{probe_csv, run_smoothness, smoothness_probe, ProbeProblem, ProbeRow};
pub use sr::{run_sr_toy, siran_config, train_config, train_sr, SrDataset, SrOutcome, SrSplit};

/// Creates `root/<name>/` and writes `config.echo` into it.
pub fn prepare_run_dir(cfg: &ExperimentConfig, root: &Path) -> Result<PathBuf> {
    let dir = root.join(&cfg.name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let echo = dir.join("config.echo");
    std::fs::write(&echo, cfg.echo()).map_err(|e| Error::io(&echo, e))?;
    Ok(dir)
}
