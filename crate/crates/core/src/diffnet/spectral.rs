use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Real, Tensor};

/// Largest singular value of a row-major `rows × cols` matrix by power
/// iteration on `AᵀA`. The estimate `‖A v_k‖` never decreases with `iters`.
pub fn spectral_norm(a: &[f64], rows: usize, cols: usize, iters: usize, seed: u64) -> f64 {
    assert_eq!(a.len(), rows * cols, "matrix data does not match shape");
    if rows == 0 || cols == 0 || a.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    let mut u = vec![0.0; rows];
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = a[r * cols..(r + 1) * cols]
                .iter()
                .zip(&v)
                .map(|(x, y)| x * y)
                .sum();
        }
        sigma = norm(&u);
        let mut next = vec![0.0; cols];
        for (r, &ur) in u.iter().enumerate() {
            for (n, &x) in next.iter_mut().zip(&a[r * cols..(r + 1) * cols]) {
                *n += x * ur;
            }
        }
        if norm(&next) == 0.0 {
            break;
        }
        normalize(&mut next);
        v = next;
    }
    // Final estimate with the last iterate.
    for (r, ur) in u.iter_mut().enumerate() {
        *ur = a[r * cols..(r + 1) * cols]
            .iter()
            .zip(&v)
            .map(|(x, y)| x * y)
            .sum();
    }
    sigma.max(norm(&u))
}

/// Views a weight-shaped gradient as a matrix: conv kernels become
/// `out × (in·k·k)`, dense weights stay `out × in`.
pub fn matrixize<T: Real>(grad: &Tensor<T>) -> (Vec<f64>, usize, usize) {
    let rows = grad.shape().first().copied().unwrap_or(1);
    let cols = grad.len() / rows.max(1);
    (grad.to_f64_vec(), rows, cols)
}

pub fn tensor_spectral_norm<T: Real>(grad: &Tensor<T>, iters: usize, seed: u64) -> f64 {
    let (a, r, c) = matrixize(grad);
    spectral_norm(&a, r, c, iters, seed)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
