use crate::error::{Error, Result};

use super::CostMatrix;

/// Exact OT value between two uniform measures on `n` points, as the
/// minimum over all `n!` assignments of `(1/n) Σ_i C[i][σ(i)]`.
pub fn exact_ot_uniform(cost: &CostMatrix) -> Result<f64> {
    let (n, m) = cost.shape();
    if n != m {
        return Err(Error::Shape(format!("cost must be square, got {n}×{m}")));
    }
    if n == 0 {
        return Err(Error::Validation("empty cost matrix".into()));
    }
    if n > 8 {
        return Err(Error::Validation(format!(
            "refusing to enumerate {n}! permutations (limit is n = 8)"
        )));
    }
    let c = &cost.values;
    let score = |perm: &[usize]| -> f64 { perm.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum() };

    // Heap's algorithm, iterative form.
    let mut perm: Vec<usize> = (0..n).collect();
    let mut counters = vec![0usize; n];
    let mut best = score(&perm);
    let mut i = 1;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            best = best.min(score(&perm));
            counters[i] += 1;
            i = 1;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    Ok(best / n as f64)
}
