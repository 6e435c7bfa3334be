use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sinkdem::ot::{
    divergence_grad_x, energy_mmd, exact_ot_uniform, median, pairwise_cost, sinkhorn_divergence,
    sinkhorn_divergence_with_grad, sinkhorn_solve, CostMatrix, DiscreteMeasure, SinkhornConfig,
};
use sinkdem::Error;

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random::<f64>())
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let w: Array1<f64> = Array1::from_shape_fn(n, |_| 0.1 + rng.random::<f64>());
    let s = w.sum();
    let mut w = w / s;
    // Push the rounding residue into the first weight so Σw = 1 to 1e-12.
    let residue = 1.0 - w.sum();
    w[0] += residue;
    w
}

fn tight(eps: f64) -> SinkhornConfig {
    SinkhornConfig {
        epsilon: eps,
        max_iters: 200_000,
        marginal_tol: 1e-13,
        p: 2.0,
    }
}

/// Independent double-loop L_p distance.
fn brute_cost(x: &Array2<f64>, y: &Array2<f64>, p: f64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; y.nrows()]; x.nrows()];
    for i in 0..x.nrows() {
        for j in 0..y.nrows() {
            let mut s = 0.0;
            for k in 0..x.ncols() {
                s += (x[[i, k]] - y[[j, k]]).abs().powf(p);
            }
            out[i][j] = s.powf(1.0 / p);
        }
    }
    out
}

/// Lexicographic recursive enumeration, different order from the library.
fn lex_assignment(c: &Array2<f64>) -> f64 {
    fn rec(c: &Array2<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        let n = c.nrows();
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                rec(c, row + 1, used, acc + c[[row, j]], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(c, 0, &mut vec![false; c.nrows()], 0.0, &mut best);
    best / c.nrows() as f64
}

/// Naive weighted double sums for the energy distance.
fn naive_mmd(x: &Array2<f64>, a: &Array1<f64>, y: &Array2<f64>, b: &Array1<f64>, p: f64) -> f64 {
    let cxy = brute_cost(x, y, p);
    let cxx = brute_cost(x, x, p);
    let cyy = brute_cost(y, y, p);
    let mut t = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            t += a[i] * b[j] * cxy[i][j];
        }
    }
    let mut s1 = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            s1 += a[i] * a[j] * cxx[i][j];
        }
    }
    let mut s2 = 0.0;
    for i in 0..b.len() {
        for j in 0..b.len() {
            s2 += b[i] * b[j] * cyy[i][j];
        }
    }
    t - 0.5 * s1 - 0.5 * s2
}

fn central_diff_grad(x: &DiscreteMeasure, y: &DiscreteMeasure, cfg: &SinkhornConfig, h: f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.points().dim());
    for i in 0..x.len() {
        for k in 0..x.dim() {
            let mut plus = x.points().clone();
            plus[[i, k]] += h;
            let mut minus = x.points().clone();
            minus[[i, k]] -= h;
            let sp = sinkhorn_divergence(&DiscreteMeasure::new(plus, x.weights().clone()).unwrap(), y, cfg).unwrap();
            let sm = sinkhorn_divergence(&DiscreteMeasure::new(minus, x.weights().clone()).unwrap(), y, cfg).unwrap();
            g[[i, k]] = (sp - sm) / (2.0 * h);
        }
    }
    g
}

fn max_rel(a: &Array2<f64>, b: &Array2<f64>, floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[test]
fn pairwise_cost_l1_by_hand() {
    let c = pairwise_cost(&array![[0.0], [1.0]], &array![[0.0], [2.0]], 1.0).unwrap();
    assert_eq!(c.values, array![[0.0, 2.0], [1.0, 1.0]]);
}

#[test]
fn pairwise_cost_diagonal_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_points(&mut rng, 7, 4);
    for p in [1.0, 1.3, 1.5, 2.0] {
        let c = pairwise_cost(&x, &x, p).unwrap();
        assert!(c.values.diag().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn pairwise_cost_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_points(&mut rng, 5, 3);
    let y = random_points(&mut rng, 4, 3);
    let c = pairwise_cost(&x, &y, 2.0).unwrap();
    let oracle = brute_cost(&x, &y, 2.0);
    for i in 0..5 {
        for j in 0..4 {
            assert!((c.values[[i, j]] - oracle[i][j]).abs() <= 1e-12);
        }
    }
}

#[test]
fn pairwise_cost_errors() {
    let e = pairwise_cost(&array![[0.0, 1.0]], &array![[0.0]], 2.0).unwrap_err();
    assert!(matches!(e, Error::Shape(_)));
    let e = pairwise_cost(&array![[f64::NAN]], &array![[0.0]], 2.0).unwrap_err();
    assert!(matches!(e, Error::Validation(_)));
    let e = pairwise_cost(&array![[0.0]], &array![[0.0]], 2.5).unwrap_err();
    assert!(matches!(e, Error::Config(_)));
}

#[test]
fn single_atoms_force_the_coupling() {
    let mu = DiscreteMeasure::uniform(array![[0.0]]).unwrap();
    let nu = DiscreteMeasure::uniform(array![[3.0]]).unwrap();
    let c = pairwise_cost(mu.points(), nu.points(), 1.0).unwrap();
    let cfg = SinkhornConfig { p: 1.0, ..tight(0.1) };
    let sol = sinkhorn_solve(&mu, &nu, &c, &cfg).unwrap();
    assert!((sol.plan[[0, 0]] - 1.0).abs() < 1e-12);
    assert!((sol.primal_cost - 3.0).abs() < 1e-12);
    assert!((sol.dual_value - 3.0).abs() < 1e-12);
}

#[test]
fn identical_measures_have_small_dual_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_points(&mut rng, 6, 2);
    let mu = DiscreteMeasure::uniform(x.clone()).unwrap();
    let c = pairwise_cost(&x, &x, 2.0).unwrap();
    let med = median(&c.values);
    let sol = sinkhorn_solve(&mu, &mu, &c, &tight(1e-3)).unwrap();
    assert!(sol.dual_value <= 1e-2 * med, "dual {} vs median {med}", sol.dual_value);
    // The identity plan is feasible, so the regularized optimum is at most
    // its entropic cost: 0 + ε·log n.
    assert!(sol.dual_value <= 1e-3 * (6f64).ln() + 1e-12);
}

#[test]
fn small_epsilon_matches_permutation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = Array2::from_shape_fn((4, 4), |_| rng.random::<f64>());
    let cost = CostMatrix { values: c.clone(), p: 2.0 };
    let mu = DiscreteMeasure::uniform(Array2::zeros((4, 1))).unwrap();
    let cfg = SinkhornConfig {
        epsilon: 1e-3 * median(&c),
        max_iters: 5000,
        marginal_tol: 1e-9,
        p: 2.0,
    };
    let sol = sinkhorn_solve(&mu, &mu, &cost, &cfg).unwrap();
    let exact = lex_assignment(&c);
    assert!((sol.primal_cost - exact).abs() <= 0.02 * exact, "{} vs {exact}", sol.primal_cost);
}

#[test]
fn plan_reconstruction_and_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mu = DiscreteMeasure::new(random_points(&mut rng, 7, 3), random_weights(&mut rng, 7)).unwrap();
    let nu = DiscreteMeasure::new(random_points(&mut rng, 5, 3), random_weights(&mut rng, 5)).unwrap();
    let c = pairwise_cost(mu.points(), nu.points(), 2.0).unwrap();
    let cfg = SinkhornConfig {
        epsilon: 0.1,
        max_iters: 10_000,
        marginal_tol: 1e-9,
        p: 2.0,
    };
    let sol = sinkhorn_solve(&mu, &nu, &c, &cfg).unwrap();
    for i in 0..7 {
        let row: f64 = sol.plan.row(i).sum();
        assert!((row - mu.weights()[i]).abs() <= 1e-8);
        assert!((row - mu.weights()[i]).abs() <= sol.marginal_violation);
        for j in 0..5 {
            let rebuilt = mu.weights()[i] * nu.weights()[j] * ((sol.f[i] + sol.g[j] - c.values[[i, j]]) / 0.1).exp();
            assert_eq!(sol.plan[[i, j]], rebuilt);
            assert!(sol.plan[[i, j]] >= 0.0);
        }
    }
    for j in 0..5 {
        let col: f64 = sol.plan.column(j).sum();
        assert!((col - nu.weights()[j]).abs() <= 1e-8);
    }
    let dual: f64 = mu.weights().dot(&sol.f) + nu.weights().dot(&sol.g);
    assert!((dual - sol.dual_value).abs() < 1e-14);
}

#[test]
fn early_stop_and_fixed_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mu = DiscreteMeasure::uniform(random_points(&mut rng, 8, 2)).unwrap();
    let nu = DiscreteMeasure::uniform(random_points(&mut rng, 8, 2)).unwrap();
    let c = pairwise_cost(mu.points(), nu.points(), 2.0).unwrap();
    let fixed = SinkhornConfig {
        epsilon: 0.1,
        max_iters: 10,
        marginal_tol: 0.0,
        p: 2.0,
    };
    assert_eq!(sinkhorn_solve(&mu, &nu, &c, &fixed).unwrap().iterations_used, 10);
    let loose = SinkhornConfig {
        marginal_tol: 1e-3,
        max_iters: 10_000,
        ..fixed
    };
    let sol = sinkhorn_solve(&mu, &nu, &c, &loose).unwrap();
    assert!(sol.iterations_used < 10_000);
    assert!(sol.marginal_violation <= 1e-3 * 1.0001);
}

#[test]
fn solver_rejects_bad_config_and_shapes() {
    let mu = DiscreteMeasure::uniform(array![[0.0], [1.0]]).unwrap();
    let c = pairwise_cost(mu.points(), mu.points(), 2.0).unwrap();
    let bad = SinkhornConfig { epsilon: 0.0, ..Default::default() };
    assert!(matches!(sinkhorn_solve(&mu, &mu, &c, &bad), Err(Error::Config(_))));
    let bad = SinkhornConfig { epsilon: -1.0, ..Default::default() };
    assert!(matches!(sinkhorn_solve(&mu, &mu, &c, &bad), Err(Error::Config(_))));
    let nu = DiscreteMeasure::uniform(array![[0.0]]).unwrap();
    assert!(matches!(sinkhorn_solve(&mu, &nu, &c, &Default::default()), Err(Error::Shape(_))));
}

#[test]
fn nan_cost_is_reported_with_iteration() {
    let mu = DiscreteMeasure::uniform(array![[0.0], [1.0]]).unwrap();
    let c = CostMatrix {
        values: array![[0.0, f64::NAN], [f64::NAN, 0.0]],
        p: 2.0,
    };
    match sinkhorn_solve(&mu, &mu, &c, &Default::default()) {
        Err(Error::Numerical { iteration, .. }) => assert_eq!(iteration, 1),
        other => panic!("expected numerical failure, got {other:?}"),
    }
}

#[test]
fn measure_validation() {
    assert!(DiscreteMeasure::new(array![[0.0], [1.0]], array![0.5, 0.6]).is_err());
    assert!(DiscreteMeasure::new(array![[0.0], [1.0]], array![-0.5, 1.5]).is_err());
    assert!(DiscreteMeasure::new(array![[f64::INFINITY]], array![1.0]).is_err());
    assert!(DiscreteMeasure::new(Array2::zeros((0, 2)), Array1::zeros(0)).is_err());
    assert!(DiscreteMeasure::new(array![[0.0], [1.0]], array![0.25, 0.75]).is_ok());
}

#[test]
fn zero_weight_atoms_are_tolerated() {
    let mu = DiscreteMeasure::new(array![[0.0], [5.0]], array![1.0, 0.0]).unwrap();
    let nu = DiscreteMeasure::uniform(array![[1.0]]).unwrap();
    let c = pairwise_cost(mu.points(), nu.points(), 1.0).unwrap();
    let sol = sinkhorn_solve(&mu, &nu, &c, &SinkhornConfig { p: 1.0, ..tight(0.1) }).unwrap();
    assert!((sol.dual_value - 1.0).abs() < 1e-9);
    assert_eq!(sol.plan[[1, 0]], 0.0);
}

#[test]
fn divergence_vanishes_on_identical_measures() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = DiscreteMeasure::new(random_points(&mut rng, 9, 3), random_weights(&mut rng, 9)).unwrap();
    for eps in [1e-3, 0.1, 10.0] {
        let s = sinkhorn_divergence(&x, &x, &SinkhornConfig { max_iters: 10, ..tight(eps) }).unwrap();
        assert!(s.abs() <= 1e-9);
    }
}

#[test]
fn large_epsilon_recovers_energy_mmd() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = DiscreteMeasure::new(random_points(&mut rng, 6, 2), random_weights(&mut rng, 6)).unwrap();
    let y = DiscreteMeasure::new(random_points(&mut rng, 6, 2), random_weights(&mut rng, 6)).unwrap();
    let cfg = SinkhornConfig { p: 1.5, ..tight(1e6) };
    let s = sinkhorn_divergence(&x, &y, &cfg).unwrap();
    let mmd = naive_mmd(x.points(), x.weights(), y.points(), y.weights(), 1.5);
    assert!((s - mmd).abs() <= 1e-3 * mmd.abs(), "S={s}, MMD={mmd}");
}

#[test]
fn small_epsilon_divergence_approaches_exact_ot() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = DiscreteMeasure::uniform(random_points(&mut rng, 5, 2)).unwrap();
    let y = DiscreteMeasure::uniform(random_points(&mut rng, 5, 2)).unwrap();
    let c = pairwise_cost(x.points(), y.points(), 2.0).unwrap();
    let exact = lex_assignment(&c.values);
    let cfg = SinkhornConfig {
        marginal_tol: 1e-10,
        ..tight(1e-3 * median(&c.values))
    };
    let s = sinkhorn_divergence(&x, &y, &cfg).unwrap();
    assert!((s - exact).abs() <= 0.02 * exact, "S={s}, OT={exact}");
}

#[test]
fn divergence_gradient_is_zero_at_coincidence() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = DiscreteMeasure::uniform(random_points(&mut rng, 6, 3)).unwrap();
    let g = divergence_grad_x(&x, &x, &tight(0.1)).unwrap();
    assert!(g.iter().all(|v| v.abs() <= 1e-8));
}

#[test]
fn divergence_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = tight(0.1);
    let x = DiscreteMeasure::uniform(random_points(&mut rng, 5, 2)).unwrap();
    let y = DiscreteMeasure::uniform(random_points(&mut rng, 5, 2)).unwrap();
    let (_, g) = sinkhorn_divergence_with_grad(&x, &y, &cfg).unwrap();
    let fd = central_diff_grad(&x, &y, &cfg, 1e-5);
    let err = max_rel(&g, &fd, 1e-8);
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn single_point_gradient_is_unit_direction() {
    let x = DiscreteMeasure::uniform(array![[1.0, 2.0]]).unwrap();
    let y = DiscreteMeasure::uniform(array![[4.0, 6.0]]).unwrap();
    let g = divergence_grad_x(&x, &y, &tight(0.1)).unwrap();
    assert!((g[[0, 0]] + 0.6).abs() < 1e-12);
    assert!((g[[0, 1]] + 0.8).abs() < 1e-12);
}

#[test]
fn coincident_points_with_p_below_two_have_finite_gradient() {
    let x = DiscreteMeasure::uniform(array![[0.0, 0.0], [0.0, 0.0], [1.0, 0.5]]).unwrap();
    let y = DiscreteMeasure::uniform(array![[0.2, 0.1], [0.9, 0.3]]).unwrap();
    let cfg = SinkhornConfig { p: 1.5, ..tight(0.1) };
    let g = divergence_grad_x(&x, &y, &cfg).unwrap();
    assert!(g.iter().all(|v| v.is_finite()));
}

#[test]
fn exact_ot_by_hand_and_limits() {
    let c = |v: Array2<f64>| CostMatrix { values: v, p: 1.0 };
    assert_eq!(exact_ot_uniform(&c(array![[0.0, 1.0], [1.0, 0.0]])).unwrap(), 0.0);
    assert_eq!(exact_ot_uniform(&c(array![[2.0, 1.0], [1.0, 2.0]])).unwrap(), 1.0);
    assert!(exact_ot_uniform(&c(Array2::zeros((9, 9)))).is_err());
    assert!(exact_ot_uniform(&c(Array2::zeros((2, 3)))).is_err());
}

#[test]
fn exact_ot_matches_second_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let v = Array2::from_shape_fn((5, 5), |_| rng.random::<f64>());
        let fast = exact_ot_uniform(&CostMatrix { values: v.clone(), p: 1.0 }).unwrap();
        assert!((fast - lex_assignment(&v)).abs() < 1e-15);
    }
}

#[test]
fn energy_mmd_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = DiscreteMeasure::new(random_points(&mut rng, 10, 3), random_weights(&mut rng, 10)).unwrap();
    assert!(energy_mmd(&x, &x, 1.5).unwrap().abs() < 1e-15);

    let a = DiscreteMeasure::uniform(array![[0.0]]).unwrap();
    let b = DiscreteMeasure::uniform(array![[2.0]]).unwrap();
    assert!((energy_mmd(&a, &b, 1.5).unwrap() - 2.0).abs() < 1e-15);

    let y = DiscreteMeasure::new(random_points(&mut rng, 10, 3), random_weights(&mut rng, 10)).unwrap();
    let got = energy_mmd(&x, &y, 1.5).unwrap();
    let want = naive_mmd(x.points(), x.weights(), y.points(), y.weights(), 1.5);
    assert!((got - want).abs() < 1e-12);
    assert!(got >= 0.0);
}

#[test]
fn divergence_approaches_ot_as_epsilon_shrinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = DiscreteMeasure::uniform(random_points(&mut rng, 5, 2)).unwrap();
    let y = DiscreteMeasure::uniform(random_points(&mut rng, 5, 2)).unwrap();
    let c = pairwise_cost(x.points(), y.points(), 2.0).unwrap();
    let ot = exact_ot_uniform(&c).unwrap();
    let med = median(&c.values);
    let gaps: Vec<f64> = [1.0, 0.1, 0.01, 0.001]
        .iter()
        .map(|k| {
            let cfg = SinkhornConfig { marginal_tol: 1e-10, ..tight(k * med) };
            (sinkhorn_divergence(&x, &y, &cfg).unwrap() - ot).abs()
        })
        .collect();
    let bumps: Vec<f64> = gaps.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
    assert!(bumps.len() <= 1 && bumps.iter().all(|&d| d <= 1e-6), "gaps {gaps:?}");
}

#[test]
fn log_domain_survives_tiny_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = DiscreteMeasure::uniform(random_points(&mut rng, 6, 2) * 70.0).unwrap();
    let y = DiscreteMeasure::uniform(random_points(&mut rng, 6, 2) * 70.0).unwrap();
    let c = pairwise_cost(x.points(), y.points(), 2.0).unwrap();
    assert!(c.values.iter().all(|&v| v <= 100.0));
    for eps in [1e-2, 1e-4, 1e-6] {
        let cfg = SinkhornConfig { epsilon: eps, max_iters: 500, marginal_tol: 0.0, p: 2.0 };
        let sol = sinkhorn_solve(&x, &y, &c, &cfg).unwrap();
        assert!(sol.plan.iter().all(|v| v.is_finite()));
        assert!(sol.dual_value.is_finite() && sol.primal_cost.is_finite());
        let s = sinkhorn_divergence(&x, &y, &cfg).unwrap();
        assert!(s.is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn divergence_is_symmetric_and_nonnegative(seed in any::<u64>(), n in 1usize..10, m in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DiscreteMeasure::new(random_points(&mut rng, n, 2), random_weights(&mut rng, n)).unwrap();
        let y = DiscreteMeasure::new(random_points(&mut rng, m, 2), random_weights(&mut rng, m)).unwrap();
        let cfg = tight(0.5);
        let sxy = sinkhorn_divergence(&x, &y, &cfg).unwrap();
        let syx = sinkhorn_divergence(&y, &x, &cfg).unwrap();
        prop_assert!((sxy - syx).abs() <= 1e-9);
        prop_assert!(sxy >= -1e-9);
    }

    #[test]
    fn marginals_hold_after_convergence(seed in any::<u64>(), n in 1usize..12, m in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DiscreteMeasure::new(random_points(&mut rng, n, 3), random_weights(&mut rng, n)).unwrap();
        let y = DiscreteMeasure::new(random_points(&mut rng, m, 3), random_weights(&mut rng, m)).unwrap();
        let c = pairwise_cost(x.points(), y.points(), 2.0).unwrap();
        let cfg = SinkhornConfig { epsilon: 0.1, max_iters: 10_000, marginal_tol: 1e-9, p: 2.0 };
        let sol = sinkhorn_solve(&x, &y, &c, &cfg).unwrap();
        prop_assert!(sol.marginal_violation <= 1e-8);
    }
}
