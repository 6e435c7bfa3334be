use ndarray::Array2;

use crate::error::{Error, Result};

use super::{cost_grad_x, lp_distance, pairwise_cost, sinkhorn_solve, DiscreteMeasure, SinkhornConfig};

/// The three entropic OT values behind one divergence evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceParts {
    pub cross: f64,
    pub self_x: f64,
    pub self_y: f64,
}

impl DivergenceParts {
    pub fn value(&self) -> f64 {
        self.cross - 0.5 * self.self_x - 0.5 * self.self_y
    }
}

fn check_dims(x: &DiscreteMeasure, y: &DiscreteMeasure) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::Shape(format!(
            "support dimensions differ: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// Debiased Sinkhorn divergence `W(x,y) - W(x,x)/2 - W(y,y)/2`, with each
/// term the dual value of a solve under the same configuration.
pub fn sinkhorn_divergence(x: &DiscreteMeasure, y: &DiscreteMeasure, cfg: &SinkhornConfig) -> Result<f64> {
    check_dims(x, y)?;
    let cxy = pairwise_cost(x.points(), y.points(), cfg.p)?;
    let cxx = pairwise_cost(x.points(), x.points(), cfg.p)?;
    let cyy = pairwise_cost(y.points(), y.points(), cfg.p)?;
    let parts = DivergenceParts {
        cross: sinkhorn_solve(x, y, &cxy, cfg)?.dual_value,
        self_x: sinkhorn_solve(x, x, &cxx, cfg)?.dual_value,
        self_y: sinkhorn_solve(y, y, &cyy, cfg)?.dual_value,
    };
    Ok(parts.value())
}

/// Divergence value and its gradient with respect to the support points
/// of `x` (weights held fixed).
///
/// `grad_i = Σ_j π_ij ∂C(x_i, y_j)/∂x_i - ½ Σ_j (π̃_ij + π̃_ji) ∂C(x_i, x_j)/∂x_i`,
/// where `π` is the cross plan and `π̃` the `x`-self plan. For a symmetric
/// self plan the second sum is the usual `Σ_j π̃_ij ∂C(x_i, x_j)/∂x_i`.
pub fn sinkhorn_divergence_with_grad(
    x: &DiscreteMeasure,
    y: &DiscreteMeasure,
    cfg: &SinkhornConfig,
) -> Result<(f64, Array2<f64>)> {
    check_dims(x, y)?;
    let p = cfg.p;
    let cxy = pairwise_cost(x.points(), y.points(), p)?;
    let cxx = pairwise_cost(x.points(), x.points(), p)?;
    let cyy = pairwise_cost(y.points(), y.points(), p)?;
    let cross = sinkhorn_solve(x, y, &cxy, cfg)?;
    let self_x = sinkhorn_solve(x, x, &cxx, cfg)?;
    let self_y = sinkhorn_solve(y, y, &cyy, cfg)?;
    let value = DivergenceParts {
        cross: cross.dual_value,
        self_x: self_x.dual_value,
        self_y: self_y.dual_value,
    }
    .value();

    let (n, d) = x.points().dim();
    let mut grad = Array2::zeros((n, d));
    let xs = x.points();
    let ys = y.points();
    for (i, mut gi) in grad.rows_mut().into_iter().enumerate() {
        let out = gi.as_slice_mut().expect("standard layout");
        for j in 0..ys.nrows() {
            cost_grad_x(xs.row(i), ys.row(j), p, cross.plan[[i, j]], out);
        }
        for j in 0..n {
            let w = -0.5 * (self_x.plan[[i, j]] + self_x.plan[[j, i]]);
            cost_grad_x(xs.row(i), xs.row(j), p, w, out);
        }
    }
    Ok((value, grad))
}

pub fn divergence_grad_x(x: &DiscreteMeasure, y: &DiscreteMeasure, cfg: &SinkhornConfig) -> Result<Array2<f64>> {
    Ok(sinkhorn_divergence_with_grad(x, y, cfg)?.1)
}

/// Energy-distance MMD with kernel `-‖·‖_p`:
/// `E_{x×y} C - ½ E_{x×x} C - ½ E_{y×y} C`.
pub fn energy_mmd(x: &DiscreteMeasure, y: &DiscreteMeasure, p: f64) -> Result<f64> {
    check_dims(x, y)?;
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::Config(format!("cost exponent p={p} outside [1, 2]")));
    }
    let expect = |a: &DiscreteMeasure, b: &DiscreteMeasure| -> f64 {
        let mut acc = 0.0;
        for (i, wa) in a.weights().iter().enumerate() {
            for (j, wb) in b.weights().iter().enumerate() {
                acc += wa * wb * lp_distance(a.points().row(i), b.points().row(j), p);
            }
        }
        acc
    };
    Ok(expect(x, y) - 0.5 * expect(x, x) - 0.5 * expect(y, y))
}
