use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

use super::{CostMatrix, DiscreteMeasure};

#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornConfig {
    /// Entropic weight.
    pub epsilon: f64,
    /// Number of (f, g) update pairs at most.
    pub max_iters: usize,
    /// Stop once the L∞ marginal violation drops to this level.
    pub marginal_tol: f64,
    /// Cost exponent of the L_p ground metric.
    pub p: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: 0.1,
            max_iters: 10,
            marginal_tol: 1e-6,
            p: 2.0,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.marginal_tol >= 0.0) {
            return Err(Error::Config(format!(
                "marginal_tol must be non-negative, got {}",
                self.marginal_tol
            )));
        }
        if !(1.0..=2.0).contains(&self.p) {
            return Err(Error::Config(format!("cost exponent p={} outside [1, 2]", self.p)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornSolution {
    /// Dual potential on the source support.
    pub f: Array1<f64>,
    /// Dual potential on the target support.
    pub g: Array1<f64>,
    pub plan: Array2<f64>,
    /// `Σ μ_i f_i + Σ ν_j g_j`; the reported entropic OT value.
    pub dual_value: f64,
    /// `⟨plan, C⟩`.
    pub primal_cost: f64,
    pub iterations_used: usize,
    /// L∞ deviation of the plan's marginals from the inputs.
    pub marginal_violation: f64,
}

/// `-ε log Σ_j w_j exp(v_j / ε)` over entries with positive weight,
/// evaluated with a max shift.
fn softmin(eps: f64, log_w: &[f64], values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (lw, v) in log_w.iter().zip(values.clone()) {
        let a = lw + v / eps;
        if a > max {
            max = a;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = log_w
        .iter()
        .zip(values)
        .map(|(lw, v)| (lw + v / eps - max).exp())
        .sum();
    -eps * (max + sum.ln())
}

fn update_f(eps: f64, c: &Array2<f64>, log_nu: &[f64], g: &Array1<f64>, f: &mut Array1<f64>) {
    for (i, fi) in f.iter_mut().enumerate() {
        let row = c.row(i);
        *fi = softmin(eps, log_nu, g.iter().zip(row).map(|(gj, cij)| gj - cij));
    }
}

fn update_g(eps: f64, c: &Array2<f64>, log_mu: &[f64], f: &Array1<f64>, g: &mut Array1<f64>) {
    for (j, gj) in g.iter_mut().enumerate() {
        let col = c.column(j);
        *gj = softmin(eps, log_mu, f.iter().zip(col).map(|(fi, cij)| fi - cij));
    }
}

/// Log-domain Sinkhorn iterations between `mu` and `nu` under `cost`.
///
/// Each iteration performs `f ← softmin_ε(g - C)` followed by
/// `g ← softmin_ε(f - C)`; it stops after `max_iters` iterations or as soon
/// as the row-marginal violation (the column marginals are exact after the
/// `g` update) falls to `marginal_tol`.
pub fn sinkhorn_solve(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
) -> Result<SinkhornSolution> {
    cfg.validate()?;
    let (n, m) = (mu.len(), nu.len());
    if cost.shape() != (n, m) {
        return Err(Error::Shape(format!(
            "cost is {:?}, measures have {n} and {m} points",
            cost.shape()
        )));
    }
    let eps = cfg.epsilon;
    let c = &cost.values;
    let log_mu: Vec<f64> = mu.weights().iter().map(|w| w.ln()).collect();
    let log_nu: Vec<f64> = nu.weights().iter().map(|w| w.ln()).collect();

    let mut f = Array1::zeros(n);
    let mut g = Array1::zeros(m);
    let mut f_next = Array1::zeros(n);
    update_f(eps, c, &log_nu, &g, &mut f_next);
    let mut iterations_used = 0;
    for it in 1..=cfg.max_iters {
        std::mem::swap(&mut f, &mut f_next);
        update_g(eps, c, &log_mu, &f, &mut g);
        if f.iter().chain(g.iter()).any(|v| v.is_nan()) {
            return Err(Error::Numerical {
                iteration: it,
                what: "NaN in dual potentials".into(),
            });
        }
        iterations_used = it;
        if it == cfg.max_iters {
            break;
        }
        update_f(eps, c, &log_nu, &g, &mut f_next);
        // Row sums of the current plan are μ_i exp((f_i - f_next_i) / ε).
        let viol = mu
            .weights()
            .iter()
            .zip(f.iter().zip(f_next.iter()))
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, (a, b))| w * ((a - b) / eps).exp_m1().abs())
            .fold(0.0, f64::max);
        if viol.is_nan() {
            return Err(Error::Numerical {
                iteration: it,
                what: "NaN in marginal check".into(),
            });
        }
        if viol <= cfg.marginal_tol {
            break;
        }
    }

    let mut plan = Array2::zeros((n, m));
    for ((i, j), p) in plan.indexed_iter_mut() {
        *p = mu.weights()[i] * nu.weights()[j] * ((f[i] + g[j] - c[[i, j]]) / eps).exp();
    }
    if plan.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            iteration: iterations_used,
            what: "non-finite transport plan".into(),
        });
    }
    let row_viol = plan
        .rows()
        .into_iter()
        .zip(mu.weights())
        .map(|(r, w)| (r.sum() - w).abs())
        .fold(0.0, f64::max);
    let col_viol = plan
        .columns()
        .into_iter()
        .zip(nu.weights())
        .map(|(col, w)| (col.sum() - w).abs())
        .fold(0.0, f64::max);

    let dual_value = weighted_sum(mu.weights(), &f) + weighted_sum(nu.weights(), &g);
    let primal_cost = (&plan * c).sum();
    Ok(SinkhornSolution {
        f,
        g,
        plan,
        dual_value,
        primal_cost,
        iterations_used,
        marginal_violation: row_viol.max(col_viol),
    })
}

fn weighted_sum(w: &Array1<f64>, v: &Array1<f64>) -> f64 {
    w.iter()
        .zip(v)
        .filter(|(&w, _)| w > 0.0)
        .map(|(w, v)| w * v)
        .sum()
}

/// Median of all entries (mean of the two middle ones for even counts).
pub fn median(values: &Array2<f64>) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
