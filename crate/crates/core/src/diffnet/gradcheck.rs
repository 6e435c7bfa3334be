use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{Gradients, Network, Real, Tensor};

/// Settings for [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    pub max_coords: usize,
    pub tol: f64,
    /// Denominator floor of the relative error,
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    pub seed: u64,
}

impl GradCheckConfig {
    /// Defaults keyed on the analytic path's precision: `tol = 1e-3` for
    /// `f32`, `tol = 1e-6` for `f64`. The numeric side is always 64-bit and
    /// uses `h = 1e-6` for both; the `f64` floor absorbs the ~1e-10 absolute
    /// rounding noise of the differenced loss.
    pub fn for_precision<T: Real>() -> Self {
        if std::mem::size_of::<T>() == 4 {
            GradCheckConfig {
                step: 1e-6,
                max_coords: 200,
                tol: 1e-3,
                floor: 1e-4,
                seed: 0,
            }
        } else {
            GradCheckConfig {
                step: 1e-6,
                max_coords: 200,
                tol: 1e-6,
                floor: 1e-3,
                seed: 0,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordError {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<CoordError>,
    /// Every coordinate above `tol`.
    pub flagged: Vec<CoordError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares reverse-mode parameter gradients with central differences on
/// up to `max_coords` randomly sampled coordinates.
///
/// `loss` maps the network output to a scalar and its gradient. The
/// numeric side always evaluates a 64-bit copy of the network.
pub fn grad_check<T, L>(
    net: &Network<T>,
    inputs: &[(&str, &Tensor<T>)],
    loss: L,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Real,
    L: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    let acts = net.forward(inputs)?;
    let out = acts.get(net.output()).cast::<f64>();
    let (_, g) = loss(&out);
    let grads = net.backward(&acts, &g.cast())?;
    grad_check_against(net, inputs, loss, &grads, cfg)
}

/// Same as [`grad_check`] but with caller-supplied analytic gradients.
pub fn grad_check_against<T, L>(
    net: &Network<T>,
    inputs: &[(&str, &Tensor<T>)],
    loss: L,
    analytic: &Gradients<T>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Real,
    L: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    let mut probe: Network<f64> = net.cast();
    let inputs64: Vec<(String, Tensor<f64>)> = inputs
        .iter()
        .map(|(n, t)| (n.to_string(), t.cast()))
        .collect();
    let eval = |p: &Network<f64>| -> Result<f64> {
        let refs: Vec<(&str, &Tensor<f64>)> =
            inputs64.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let acts = p.forward(&refs)?;
        Ok(loss(acts.get(p.output())).0)
    };

    let offsets: Vec<usize> = net
        .params()
        .iter()
        .scan(0, |acc, p| {
            let o = *acc;
            *acc += p.value.len();
            Some(o)
        })
        .collect();
    let total = net.parameter_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picks = sample(&mut rng, total, cfg.max_coords.min(total)).into_vec();
    picks.sort_unstable();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
        flagged: Vec::new(),
    };
    for flat in picks {
        let pi = offsets.partition_point(|&o| o <= flat) - 1;
        let idx = flat - offsets[pi];
        let orig = probe.params()[pi].value.data()[idx];
        probe.params_mut()[pi].value.data_mut()[idx] = orig + cfg.step;
        let plus = eval(&probe)?;
        probe.params_mut()[pi].value.data_mut()[idx] = orig - cfg.step;
        let minus = eval(&probe)?;
        probe.params_mut()[pi].value.data_mut()[idx] = orig;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic.params[pi].data()[idx].as_f64();
        let e = CoordError {
            param: net.params()[pi].name.clone(),
            index: idx,
            analytic: a,
            numeric,
            rel_err: rel_err(a, numeric, cfg.floor),
        };
        report.checked += 1;
        if e.rel_err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(e.rel_err);
            report.worst = Some(e.clone());
        }
        if e.rel_err > cfg.tol {
            report.flagged.push(e);
        }
    }
    Ok(report)
}
