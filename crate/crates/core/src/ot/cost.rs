use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Pairwise L_p distances, `values[i][j] = ‖x_i - y_j‖_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    pub values: Array2<f64>,
    pub p: f64,
}

impl CostMatrix {
    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::Config(format!("cost exponent p={p} is outside [1, 2]")));
    }
    Ok(())
}

pub fn lp_distance(x: ArrayView1<f64>, y: ArrayView1<f64>, p: f64) -> f64 {
    if p == 2.0 {
        x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    } else if p == 1.0 {
        x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum()
    } else {
        x.iter()
            .zip(y)
            .map(|(a, b)| (a - b).abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

pub fn pairwise_cost(x: &Array2<f64>, y: &Array2<f64>, p: f64) -> Result<CostMatrix> {
    check_p(p)?;
    if x.ncols() != y.ncols() {
        return Err(Error::Shape(format!(
            "point dimensions differ: {} vs {}",
            x.ncols(),
            y.ncols()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite point coordinate".into()));
    }
    let values = Array2::from_shape_fn((x.nrows(), y.nrows()), |(i, j)| {
        lp_distance(x.row(i), y.row(j), p)
    });
    Ok(CostMatrix { values, p })
}

/// `∂‖x - y‖_p / ∂x`, accumulated into `out` with weight `w`.
///
/// Coincident points contribute nothing (subgradient 0); for `p = 1`
/// coordinates with `x_k = y_k` likewise contribute 0.
pub fn cost_grad_x(x: ArrayView1<f64>, y: ArrayView1<f64>, p: f64, w: f64, out: &mut [f64]) {
    let d = lp_distance(x, y, p);
    if d == 0.0 || w == 0.0 {
        return;
    }
    if p == 2.0 {
        let s = w / d;
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o += s * (a - b);
        }
    } else if p == 1.0 {
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            let diff: f64 = a - b;
            if diff != 0.0 {
                *o += w * diff.signum();
            }
        }
    } else {
        let s = w * d.powf(1.0 - p);
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            let diff: f64 = a - b;
            if diff != 0.0 {
                *o += s * diff.signum() * diff.abs().powf(p - 1.0);
            }
        }
    }
}
