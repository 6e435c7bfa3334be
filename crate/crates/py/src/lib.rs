//! Python bindings: entropic OT, divergences, config parsing and the
//! experiment runners.

use std::path::Path;

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sinkdem::data::gen_terrain as core_gen_terrain;
use sinkdem::experiments::{
    run_baselines, run_denoise, run_eps_sweep, run_smoothness, run_sr_toy, smoothness_probe as core_probe,
    ExperimentConfig, ExperimentKind,
};
use sinkdem::ot::{self, CostMatrix, DiscreteMeasure, SinkhornConfig};
use sinkdem::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Numerical { .. } | Error::NonFiniteLoss { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Array2<f64>> {
    let m = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err(format!("{what} must be a nonempty rectangular matrix")));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, m), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn uniform(points: Vec<Vec<f64>>, what: &str) -> PyResult<DiscreteMeasure> {
    DiscreteMeasure::uniform(matrix(points, what)?).map_err(to_py)
}

fn config(eps: f64, p: f64, max_iters: usize) -> SinkhornConfig {
    SinkhornConfig {
        epsilon: eps,
        max_iters,
        p,
        ..SinkhornConfig::default()
    }
}

/// Entropic OT between uniform marginals for a cost matrix.
#[pyfunction]
#[pyo3(signature = (cost, eps=0.1, max_iters=1000, marginal_tol=1e-6))]
fn sinkhorn_solve<'py>(
    py: Python<'py>,
    cost: Vec<Vec<f64>>,
    eps: f64,
    max_iters: usize,
    marginal_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let c = matrix(cost, "cost")?;
    let (n, m) = c.dim();
    let mu = DiscreteMeasure::uniform(Array2::zeros((n, 1))).map_err(to_py)?;
    let nu = DiscreteMeasure::uniform(Array2::zeros((m, 1))).map_err(to_py)?;
    let cfg = SinkhornConfig {
        marginal_tol,
        ..config(eps, 2.0, max_iters)
    };
    let sol = ot::sinkhorn_solve(&mu, &nu, &CostMatrix { values: c, p: cfg.p }, &cfg).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("dual_value", sol.dual_value)?;
    d.set_item("primal_cost", sol.primal_cost)?;
    d.set_item("iterations_used", sol.iterations_used)?;
    d.set_item("marginal_violation", sol.marginal_violation)?;
    d.set_item("plan", to_rows(&sol.plan))?;
    d.set_item("f", sol.f.to_vec())?;
    d.set_item("g", sol.g.to_vec())?;
    Ok(d)
}

/// Debiased Sinkhorn divergence between two uniform point clouds.
#[pyfunction]
#[pyo3(signature = (x, y, eps=0.1, p=2.0, max_iters=100))]
fn sinkhorn_divergence(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, eps: f64, p: f64, max_iters: usize) -> PyResult<f64> {
    ot::sinkhorn_divergence(&uniform(x, "x")?, &uniform(y, "y")?, &config(eps, p, max_iters)).map_err(to_py)
}

/// Gradient of the divergence with respect to the points of `x`.
#[pyfunction]
#[pyo3(signature = (x, y, eps=0.1, p=2.0, max_iters=100))]
fn divergence_grad_x(
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    eps: f64,
    p: f64,
    max_iters: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let g = ot::divergence_grad_x(&uniform(x, "x")?, &uniform(y, "y")?, &config(eps, p, max_iters)).map_err(to_py)?;
    Ok(to_rows(&g))
}

#[pyfunction]
#[pyo3(signature = (x, y, p=2.0))]
fn energy_mmd(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, p: f64) -> PyResult<f64> {
    ot::energy_mmd(&uniform(x, "x")?, &uniform(y, "y")?, p).map_err(to_py)
}

/// Unregularized OT value of a square cost by enumerating permutations.
#[pyfunction]
fn exact_ot_uniform(cost: Vec<Vec<f64>>) -> PyResult<f64> {
    ot::exact_ot_uniform(&CostMatrix {
        values: matrix(cost, "cost")?,
        p: 2.0,
    })
    .map_err(to_py)
}

/// Parses a key=value config and returns its canonical echo.
#[pyfunction]
fn parse_config(text: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::parse(text).map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    Ok(cfg.echo())
}

fn build_config(kind: &str, overrides: &[String]) -> PyResult<ExperimentConfig> {
    let kind: ExperimentKind = kind.parse().map_err(to_py)?;
    let mut cfg = ExperimentConfig::for_kind(kind);
    for kv in overrides {
        cfg.apply_override(kv).map_err(to_py)?;
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Runs one experiment kind and returns its output directory.
#[pyfunction]
#[pyo3(signature = (kind, overrides=Vec::new(), out="runs"))]
fn run_experiment(py: Python<'_>, kind: &str, overrides: Vec<String>, out: &str) -> PyResult<String> {
    let cfg = build_config(kind, &overrides)?;
    let root = Path::new(out);
    py.detach(|| -> sinkdem::Result<()> {
        match cfg.kind {
            ExperimentKind::Denoise => run_denoise(&cfg, root).map(drop),
            ExperimentKind::EpsSweep => run_eps_sweep(&cfg, root).map(drop),
            ExperimentKind::Baselines => run_baselines(&cfg, root).map(drop),
            ExperimentKind::SrToy => run_sr_toy(&cfg, root).map(drop),
            ExperimentKind::Smoothness => run_smoothness(&cfg, root).map(drop),
        }
    })
    .map_err(to_py)?;
    Ok(root.join(&cfg.name).display().to_string())
}

/// `(epsilon, gamma_hat, theory_log10)` rows of the smoothness probe.
#[pyfunction]
#[pyo3(signature = (overrides=Vec::new()))]
fn smoothness_probe(overrides: Vec<String>) -> PyResult<Vec<(f64, f64, f64)>> {
    let cfg = build_config("smoothness", &overrides)?;
    let rows = core_probe(&cfg).map_err(to_py)?;
    Ok(rows.iter().map(|r| (r.epsilon, r.gamma_hat, r.theory_log10)).collect())
}

/// Synthetic terrain in [0, 1] as a list of rows.
#[pyfunction]
#[pyo3(signature = (seed, size, roughness=0.6))]
fn gen_terrain(seed: u64, size: usize, roughness: f64) -> PyResult<Vec<Vec<f32>>> {
    let r = core_gen_terrain(seed, size, roughness).map_err(to_py)?;
    Ok(r.data.chunks(r.width).map(<[f32]>::to_vec).collect())
}

#[pymodule]
fn sinkdem_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sinkhorn_solve, m)?)?;
    m.add_function(wrap_pyfunction!(sinkhorn_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(divergence_grad_x, m)?)?;
    m.add_function(wrap_pyfunction!(energy_mmd, m)?)?;
    m.add_function(wrap_pyfunction!(exact_ot_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(smoothness_probe, m)?)?;
    m.add_function(wrap_pyfunction!(gen_terrain, m)?)?;
    Ok(())
}
