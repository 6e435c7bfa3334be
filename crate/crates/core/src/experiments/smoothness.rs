use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ot::{sinkhorn_divergence_with_grad, DiscreteMeasure, SinkhornConfig};

use super::{prepare_run_dir, ExperimentConfig};

const PROBE_ITERS: usize = 2000;

/// Fixed data of the probe: latent codes and target points.
#[derive(Clone, Debug)]
pub struct ProbeProblem {
    pub latent: Array2<f64>,
    pub target: Array2<f64>,
    pub scale: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub epsilon: f64,
    pub gamma_hat: f64,
    /// `log10` of the small-ε asymptotic smoothness form, for comparison only.
    pub theory_log10: f64,
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

impl ProbeProblem {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        ProbeProblem {
            latent: normal(&mut rng, cfg.probe_points, cfg.probe_latent),
            target: normal(&mut rng, cfg.probe_points, cfg.probe_dim),
            scale: cfg.lipschitz_scale,
            p: cfg.sinkhorn_p,
        }
    }

    /// Generator `x_i = scale · θ z_i` with `θ` of shape `dim × latent`.
    pub fn generate(&self, theta: &Array2<f64>) -> Array2<f64> {
        self.latent.dot(&theta.t()) * self.scale
    }

    /// Loss `S_ε(G_θ, target)` and its gradient in `θ`.
    pub fn loss_grad(&self, theta: &Array2<f64>, epsilon: f64) -> Result<(f64, Array2<f64>)> {
        let x = DiscreteMeasure::uniform(self.generate(theta))?;
        let y = DiscreteMeasure::uniform(self.target.clone())?;
        let cfg = SinkhornConfig {
            epsilon,
            max_iters: PROBE_ITERS,
            marginal_tol: 1e-12,
            p: self.p,
        };
        let (v, gx) = sinkhorn_divergence_with_grad(&x, &y, &cfg)?;
        Ok((v, gx.t().dot(&self.latent) * self.scale))
    }

    /// Small-ε form `2 L0² L² / (B ε e^{κ/ε})` with `L0 = 1`, `L` the
    /// generator's Lipschitz constant in `θ`, `B` and `κ` from the data.
    pub fn theory_log10(&self, theta: &Array2<f64>, epsilon: f64) -> f64 {
        let lip = self.scale * self.latent.rows().into_iter().map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max);
        let d = self.target.ncols() as f64;
        let extent = self.target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let b = d * extent;
        let x = self.generate(theta);
        let dist = |a: ndarray::ArrayView1<f64>, c: ndarray::ArrayView1<f64>| {
            a.iter().zip(c).map(|(u, v)| (u - v).abs().powf(self.p)).sum::<f64>().powf(1.0 / self.p)
        };
        let mut c_max = 0.0f64;
        for a in x.rows() {
            for c in self.target.rows() {
                c_max = c_max.max(dist(a, c));
            }
        }
        let mut diam = 0.0f64;
        for a in self.target.rows() {
            for c in self.target.rows() {
                diam = diam.max(dist(a, c));
            }
        }
        let kappa = 2.0 * (diam + c_max);
        (2.0 * lip * lip / (b * epsilon)).log10() - kappa / (epsilon * std::f64::consts::LN_10)
    }
}

/// `Γ̂_ε`: the largest gradient-difference ratio over nearby parameter pairs.
pub fn smoothness_probe(cfg: &ExperimentConfig) -> Result<Vec<ProbeRow>> {
    cfg.validate()?;
    let problem = ProbeProblem::new(cfg);
    let mut rows = Vec::new();
    for &eps in &cfg.epsilon_list {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let mut gamma = 0.0f64;
        let mut theory = f64::NEG_INFINITY;
        for pair in 0..cfg.probe_pairs {
            let t1 = normal(&mut rng, cfg.probe_dim, cfg.probe_latent);
            let mut dir = normal(&mut rng, cfg.probe_dim, cfg.probe_latent);
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir *= cfg.probe_delta / norm;
            let t2 = &t1 + &dir;
            let (_, g1) = problem.loss_grad(&t1, eps)?;
            let (_, g2) = problem.loss_grad(&t2, eps)?;
            let diff = (&g1 - &g2).iter().map(|v| v * v).sum::<f64>().sqrt();
            gamma = gamma.max(diff / cfg.probe_delta);
            if pair == 0 {
                theory = problem.theory_log10(&t1, eps);
            }
        }
        if !gamma.is_finite() {
            return Err(Error::Numerical {
                iteration: 0,
                what: format!("smoothness estimate at epsilon {eps} is not finite"),
            });
        }
        rows.push(ProbeRow {
            epsilon: eps,
            gamma_hat: gamma,
            theory_log10: theory,
        });
    }
    Ok(rows)
}

pub fn probe_csv(rows: &[ProbeRow]) -> String {
    let mut s = String::from("epsilon,gamma_hat,theory_log10\n");
    for r in rows {
        s.push_str(&format!("{:?},{:?},{:?}\n", r.epsilon, r.gamma_hat, r.theory_log10));
    }
    s
}

/// Runs the probe and writes `smoothness.csv` under `root/<name>/`.
pub fn run_smoothness(cfg: &ExperimentConfig, root: &Path) -> Result<Vec<ProbeRow>> {
    let rows = smoothness_probe(cfg)?;
    let dir = prepare_run_dir(cfg, root)?;
    let path = dir.join("smoothness.csv");
    std::fs::write(&path, probe_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
