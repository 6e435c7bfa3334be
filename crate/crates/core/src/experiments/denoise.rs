use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{eval_metrics, load_mnist, write_metrics_csv, MetricsRecord};
use crate::diffnet::{checkpoint, tensor_spectral_norm, AdamState, Network, NetworkBuilder, Real, Tensor};
use crate::error::{Error, Result};
use crate::losses::{adv_d_loss, adv_g_loss, pixel_loss, sinkhorn_loss, LossValue};
use crate::ot::SinkhornConfig;

use super::{prepare_run_dir, ExperimentConfig, Method};

const SPECTRAL_ITERS: usize = 20;
const GP_STEP: f64 = 1e-2;

/// Two strided convs down, two upsample + conv stages back to `[1, 28, 28]`.
/// The output layer is linear.
pub fn denoise_generator(seed: u64) -> Network<f32> {
    let mut b = NetworkBuilder::new(seed);
    let x = b.input("x", &[1, 28, 28]);
    let e1 = b.conv3x3("enc1", x, 16, 2);
    let e1 = b.leaky_relu(e1, 0.2);
    let e2 = b.conv3x3("enc2", e1, 32, 2);
    let e2 = b.leaky_relu(e2, 0.2);
    let u1 = b.upsample(e2, 2);
    let d1 = b.conv3x3("dec1", u1, 16, 1);
    let d1 = b.leaky_relu(d1, 0.2);
    let u2 = b.upsample(d1, 2);
    let out = b.conv3x3("dec2", u2, 1, 1);
    b.build(out).expect("fixed architecture")
}

/// Fully connected 784 → 1024 → 256 → 1 with ReLU hidden layers.
pub fn denoise_discriminator(seed: u64) -> Network<f32> {
    let mut b = NetworkBuilder::new(seed);
    let img = b.input("img", &[1, 28, 28]);
    let h1 = b.dense("fc1", img, 1024);
    let h1 = b.relu(h1);
    let h2 = b.dense("fc2", h1, 256);
    let h2 = b.relu(h2);
    let out = b.dense("fc3", h2, 1);
    b.build(out).expect("fixed architecture")
}

pub const FIRST_LAYER: &str = "enc1.weight";
pub const HIDDEN_LAYER: &str = "enc2.weight";

#[derive(Clone, Debug)]
pub struct DenoiseData {
    pub train: Tensor<f32>,
    pub test_clean: Tensor<f32>,
    pub test_noisy: Tensor<f32>,
}

fn images(set: &crate::data::MnistSet) -> Result<Tensor<f32>> {
    Tensor::new(&[set.count, 1, set.rows, set.cols], set.images.clone())
}

/// Additive Gaussian noise clamped to `[0, 1]`.
pub fn add_noise(clean: &Tensor<f32>, sigma: f64, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let mut out = clean.clone();
    for v in out.data_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v = (*v as f64 + sigma * n).clamp(0.0, 1.0) as f32;
    }
    out
}

impl DenoiseData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let mut train = load_mnist(&cfg.data_dir, true)?;
        let mut test = load_mnist(&cfg.data_dir, false)?;
        if let Some(n) = cfg.subset_size {
            train = train.truncate(n);
        }
        if let Some(n) = cfg.test_size {
            test = test.truncate(n);
        }
        if (train.rows, train.cols) != (28, 28) || (test.rows, test.cols) != (28, 28) {
            return Err(Error::Format("denoising expects 28x28 images".into()));
        }
        let test_clean = images(&test)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e57_0000_0000_0001);
        let test_noisy = add_noise(&test_clean, cfg.noise_sigma, &mut rng);
        Ok(DenoiseData {
            train: images(&train)?,
            test_clean,
            test_noisy,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseOutcome {
    pub method: Method,
    pub epsilon: f64,
    pub records: Vec<MetricsRecord>,
    /// First epoch (1-based) whose test MSE reached the target.
    pub epochs_to_target: Option<usize>,
    pub failure: Option<String>,
}

/// Clamps every parameter to `[-c, c]`.
pub fn clip_params<T: Real>(net: &mut Network<T>, c: f64) {
    let (lo, hi) = (T::lit(-c), T::lit(c));
    for p in net.params_mut() {
        for v in p.value.data_mut() {
            *v = v.max(lo).min(hi);
        }
    }
}

fn input_grad<T: Real>(net: &Network<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let acts = net.forward(&[("img", x)])?;
    let ones = Tensor::full(acts.get(net.output()).shape(), T::one());
    let g = net.backward(&acts, &ones)?;
    Ok(g.input("img").expect("critic input").clone())
}

fn param_grad_sum<T: Real>(net: &Network<T>, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let acts = net.forward(&[("img", x)])?;
    let ones = Tensor::full(acts.get(net.output()).shape(), T::one());
    Ok(net.backward(&acts, &ones)?.params)
}

/// `λ · mean_i (‖∇_x D(x̂_i)‖ − 1)²` and its parameter gradient.
///
/// The parameter gradient is a Hessian-vector product, taken as a central
/// difference of parameter gradients along the per-sample directions.
pub fn gradient_penalty<T: Real>(net: &Network<T>, interp: &Tensor<T>, lambda: f64) -> Result<(f64, Vec<Tensor<T>>)> {
    let n = interp.batch();
    let g = input_grad(net, interp)?;
    let len = interp.sample_len();
    let mut value = 0.0;
    let mut dir = Tensor::<T>::zeros(interp.shape());
    for (row, d) in g.data().chunks(len).zip(dir.data_mut().chunks_mut(len)) {
        let norm = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        value += lambda * (norm - 1.0).powi(2) / n as f64;
        if norm > 0.0 {
            let k = 2.0 * lambda * (norm - 1.0) / (n as f64 * norm);
            for (di, &gi) in d.iter_mut().zip(row) {
                *di = T::lit(k * gi.as_f64());
            }
        }
    }
    let scale = dir.data().iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
    let zeros = || net.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
    if scale == 0.0 {
        return Ok((value, zeros()));
    }
    let h = GP_STEP / scale;
    let shifted = |sign: f64| {
        let mut x = interp.clone();
        for (xi, &di) in x.data_mut().iter_mut().zip(dir.data()) {
            *xi += T::lit(sign * h * di.as_f64());
        }
        x
    };
    let plus = param_grad_sum(net, &shifted(1.0))?;
    let minus = param_grad_sum(net, &shifted(-1.0))?;
    let grads = plus
        .iter()
        .zip(&minus)
        .map(|(p, m)| {
            let mut out = p.clone();
            for (o, &mv) in out.data_mut().iter_mut().zip(m.data()) {
                *o = T::lit((o.as_f64() - mv.as_f64()) / (2.0 * h));
            }
            out
        })
        .collect();
    Ok((value, grads))
}

struct Models {
    g: Network<f32>,
    d: Network<f32>,
    opt_g: AdamState<f32>,
    opt_d: AdamState<f32>,
}

fn logits_of(d: &Network<f32>, x: &Tensor<f32>) -> Result<(crate::diffnet::Activations<f32>, Tensor<f64>)> {
    let acts = d.forward(&[("img", x)])?;
    let logits = acts.get(d.output()).cast();
    Ok((acts, logits))
}

fn finite(term: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { term: term.into() })
    }
}

#[derive(Default)]
struct StepStats {
    l_p: f64,
    l_adv: f64,
    l_ot: Option<f64>,
    g_first: f64,
    g_hidden: f64,
}

fn discriminator_step(
    m: &mut Models,
    cfg: &ExperimentConfig,
    clean: &Tensor<f32>,
    fake: &Tensor<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let n = clean.batch();
    let stacked = Tensor::stack_batches(&[clean, fake])?;
    let (acts, logits) = logits_of(&m.d, &stacked)?;
    let mut seed = Tensor::<f32>::zeros(&[2 * n, 1]);
    match cfg.method {
        Method::Gan | Method::SinkhornGan => {
            let (real, fk) = adv_d_loss(&logits.slice_batch(0, n), &logits.slice_batch(n, 2 * n));
            finite("L_ADV_D", real.value + fk.value)?;
            for (s, &g) in seed.data_mut().iter_mut().zip(real.grad.data().iter().chain(fk.grad.data())) {
                *s = g as f32;
            }
        }
        Method::Wgan | Method::WganGp => {
            let l = logits.data();
            let critic = (l[n..].iter().sum::<f64>() - l[..n].iter().sum::<f64>()) / n as f64;
            finite("L_CRITIC", critic)?;
            for (i, s) in seed.data_mut().iter_mut().enumerate() {
                *s = if i < n { -1.0 } else { 1.0 } / n as f32;
            }
        }
    }
    let mut grads = m.d.backward(&acts, &seed)?.params;
    if cfg.method == Method::WganGp {
        let mut interp = clean.clone();
        let len = clean.sample_len();
        for (row, f) in interp.data_mut().chunks_mut(len).zip(fake.data().chunks(len)) {
            let t: f32 = rng.random();
            for (r, &fv) in row.iter_mut().zip(f) {
                *r = t * *r + (1.0 - t) * fv;
            }
        }
        let (gp, gp_grads) = gradient_penalty(&m.d, &interp, cfg.gp_lambda)?;
        finite("L_GP", gp)?;
        for (g, e) in grads.iter_mut().zip(&gp_grads) {
            g.add_assign(e);
        }
    }
    m.opt_d.step(m.d.params_mut(), &grads)?;
    if cfg.method == Method::Wgan {
        clip_params(&mut m.d, cfg.clip);
    }
    Ok(())
}

fn generator_step(
    m: &mut Models,
    cfg: &ExperimentConfig,
    epsilon: f64,
    noisy: &Tensor<f32>,
    clean: &Tensor<f32>,
) -> Result<StepStats> {
    let n = clean.batch();
    let w = &cfg.weights;
    let acts = m.g.forward(&[("x", noisy)])?;
    let pred_f32 = acts.get(m.g.output()).clone();
    let pred: Tensor<f64> = pred_f32.cast();
    let target: Tensor<f64> = clean.cast();

    let pixel = pixel_loss(&pred, &target)?;
    finite("L_P", pixel.value)?;
    let mut total = pixel.grad.clone();
    total.scale(w.lambda_p);

    let (dacts, logits) = logits_of(&m.d, &pred_f32)?;
    let adv = match cfg.method {
        Method::Gan | Method::SinkhornGan => adv_g_loss(&logits),
        Method::Wgan | Method::WganGp => LossValue {
            value: -logits.data().iter().sum::<f64>() / n as f64,
            grad: Tensor::full(&[n, 1], -1.0 / n as f64),
        },
    };
    finite("L_ADV", adv.value)?;
    if w.lambda_adv != 0.0 {
        let dg = m.d.backward(&dacts, &adv.grad.cast())?;
        let mut g: Tensor<f64> = dg.input("img").expect("critic input").cast();
        g.scale(w.lambda_adv);
        total.add_assign(&g);
    }

    let ot = if cfg.method == Method::SinkhornGan && w.lambda_ot != 0.0 {
        let sc = SinkhornConfig {
            epsilon,
            max_iters: cfg.sinkhorn_iters,
            p: cfg.sinkhorn_p,
            ..SinkhornConfig::default()
        };
        let l = sinkhorn_loss(&pred, &target, &sc, cfg.ot_mode)?;
        finite("L_OT", l.value)?;
        let mut g = l.grad.clone();
        g.scale(w.lambda_ot);
        total.add_assign(&g);
        Some(l.value)
    } else {
        None
    };

    let grads = m.g.backward(&acts, &total.cast())?.params;
    let first = m.g.param_index(FIRST_LAYER).expect("first layer");
    let hidden = m.g.param_index(HIDDEN_LAYER).expect("hidden layer");
    let stats = StepStats {
        l_p: pixel.value,
        l_adv: adv.value,
        l_ot: ot,
        g_first: tensor_spectral_norm(&grads[first], SPECTRAL_ITERS, 0),
        g_hidden: tensor_spectral_norm(&grads[hidden], SPECTRAL_ITERS, 0),
    };
    m.opt_g.step(m.g.params_mut(), &grads)?;
    Ok(stats)
}

/// Predicts in chunks to bound memory.
pub fn denoise_predict(g: &Network<f32>, noisy: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut parts = Vec::new();
    let n = noisy.batch();
    for start in (0..n).step_by(256) {
        let chunk = noisy.slice_batch(start, (start + 256).min(n));
        parts.push(g.forward(&[("x", &chunk)])?.get(g.output()).clone());
    }
    let refs: Vec<&Tensor<f32>> = parts.iter().collect();
    Tensor::stack_batches(&refs)
}

fn failure_row(epoch: usize) -> MetricsRecord {
    MetricsRecord {
        epoch,
        mse: Some(f64::NAN),
        ..MetricsRecord::default()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Trains one denoising run in memory. Divergence ends the run with a
/// failure row instead of an error.
///
/// Returns the outcome with the trained generator and discriminator.
pub fn train_denoise(
    cfg: &ExperimentConfig,
    epsilon: f64,
    data: &DenoiseData,
) -> Result<(DenoiseOutcome, Network<f32>, Network<f32>)> {
    cfg.validate()?;
    let mut models = {
        let g = denoise_generator(cfg.seed);
        let d = denoise_discriminator(cfg.seed.wrapping_add(1));
        Models {
            opt_g: AdamState::new(g.params(), cfg.lr),
            opt_d: AdamState::new(d.params(), cfg.lr),
            g,
            d,
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = data.train.batch();
    let mut order: Vec<usize> = (0..n).collect();
    let mut outcome = DenoiseOutcome {
        method: cfg.method,
        epsilon,
        records: Vec::new(),
        epochs_to_target: None,
        failure: None,
    };
    let test_truth: Tensor<f64> = data.test_clean.cast();
    let start = Instant::now();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut stats = Vec::new();
        let mut failed = None;
        for idx in order.chunks(cfg.batch) {
            let clean = data.train.select(idx);
            let noisy = add_noise(&clean, cfg.noise_sigma, &mut rng);
            let step = (|| {
                let fake = models.g.forward(&[("x", &noisy)])?.get(models.g.output()).clone();
                discriminator_step(&mut models, cfg, &clean, &fake, &mut rng)?;
                generator_step(&mut models, cfg, epsilon, &noisy, &clean)
            })();
            match step {
                Ok(s) => stats.push(s),
                Err(e @ (Error::NonFiniteLoss { .. } | Error::Validation(_) | Error::Numerical { .. })) => {
                    failed = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(msg) = failed {
            outcome.records.push(failure_row(epoch));
            outcome.failure = Some(format!("epoch {epoch}: {msg}"));
            break;
        }
        let pred: Tensor<f64> = denoise_predict(&models.g, &data.test_noisy)?.cast();
        let mut rec = eval_metrics(&pred, &test_truth, 1.0)?;
        rec.epoch = epoch;
        rec.wallclock_s = cfg.log_wallclock.then(|| start.elapsed().as_secs_f64());
        let col = |f: fn(&StepStats) -> f64| mean(&stats.iter().map(f).collect::<Vec<_>>());
        rec.l_p = Some(col(|s| s.l_p));
        rec.l_adv = Some(col(|s| s.l_adv));
        rec.l_ot = stats
            .iter()
            .map(|s| s.l_ot)
            .collect::<Option<Vec<f64>>>()
            .map(|v| mean(&v));
        rec.g_first = Some(col(|s| s.g_first));
        rec.g_hidden = Some(col(|s| s.g_hidden));
        let mse = rec.mse.unwrap_or(f64::NAN);
        if !mse.is_finite() {
            outcome.records.push(failure_row(epoch));
            outcome.failure = Some(format!("epoch {epoch}: non-finite test MSE"));
            break;
        }
        outcome.records.push(rec);
        if mse <= cfg.target_mse {
            outcome.epochs_to_target = Some(epoch);
            break;
        }
    }
    Ok((outcome, models.g, models.d))
}

/// Trains and writes `metrics.csv`, `config.echo` and the generator
/// checkpoint under `root/<name>/`.
pub fn run_denoise(cfg: &ExperimentConfig, root: &Path) -> Result<DenoiseOutcome> {
    cfg.validate()?;
    let data = DenoiseData::load(cfg)?;
    let dir = prepare_run_dir(cfg, root)?;
    let (outcome, g, _) = train_denoise(cfg, cfg.epsilon_list[0], &data)?;
    write_metrics_csv(&outcome.records, &dir.join("metrics.csv"))?;
    if cfg.checkpoints {
        checkpoint::save(&g, &dir.join("generator.sdnc"))?;
    }
    Ok(outcome)
}

/// Epoch range of the near-optimal window: the final 10% (at least one
/// epoch) of the epochs up to the target, or of the whole run.
pub fn near_optimal_window(records: &[MetricsRecord], epochs_to_target: Option<usize>) -> std::ops::Range<usize> {
    let end = epochs_to_target.unwrap_or(records.len()).min(records.len());
    let width = end.div_ceil(10).max(1).min(end);
    end - width..end
}

pub fn near_optimal_mean(
    records: &[MetricsRecord],
    epochs_to_target: Option<usize>,
    field: fn(&MetricsRecord) -> Option<f64>,
) -> Option<f64> {
    let vals: Vec<f64> = records[near_optimal_window(records, epochs_to_target)]
        .iter()
        .filter_map(field)
        .filter(|v| v.is_finite())
        .collect();
    (!vals.is_empty()).then(|| mean(&vals))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub outcome: DenoiseOutcome,
    pub near_opt_first: Option<f64>,
    pub near_opt_hidden: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
}

pub fn sweep_entry(outcome: DenoiseOutcome) -> SweepEntry {
    let r = &outcome.records;
    SweepEntry {
        near_opt_first: near_optimal_mean(r, outcome.epochs_to_target, |m| m.g_first),
        near_opt_hidden: near_optimal_mean(r, outcome.epochs_to_target, |m| m.g_hidden),
        outcome,
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:?}")).unwrap_or_default()
}

/// One Sinkhorn-GAN run per epsilon; writes `eps_<ε>/metrics.csv` and
/// `sweep.csv` under `root/<name>/`.
pub fn run_eps_sweep(cfg: &ExperimentConfig, root: &Path) -> Result<SweepResult> {
    cfg.validate()?;
    let data = DenoiseData::load(cfg)?;
    let dir = prepare_run_dir(cfg, root)?;
    let run_cfg = ExperimentConfig {
        method: Method::SinkhornGan,
        ..cfg.clone()
    };
    let mut entries = Vec::new();
    let mut table = String::from("epsilon,epochs_to_target,near_opt_first,near_opt_hidden,failed\n");
    for &eps in &cfg.epsilon_list {
        let (outcome, _, _) = train_denoise(&run_cfg, eps, &data)?;
        let sub = dir.join(format!("eps_{eps:?}"));
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        write_metrics_csv(&outcome.records, &sub.join("metrics.csv"))?;
        let e = sweep_entry(outcome);
        table.push_str(&format!(
            "{eps:?},{},{},{},{}\n",
            e.outcome.epochs_to_target.map(|v| v.to_string()).unwrap_or_default(),
            opt_cell(e.near_opt_first),
            opt_cell(e.near_opt_hidden),
            e.outcome.failure.is_some()
        ));
        entries.push(e);
    }
    let path = dir.join("sweep.csv");
    std::fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
    Ok(SweepResult { entries })
}

/// Every method on the same seed and data; writes `<method>/metrics.csv`
/// and `comparison.csv` under `root/<name>/`.
pub fn run_baselines(cfg: &ExperimentConfig, root: &Path) -> Result<Vec<DenoiseOutcome>> {
    cfg.validate()?;
    let data = DenoiseData::load(cfg)?;
    let dir = prepare_run_dir(cfg, root)?;
    let mut out = Vec::new();
    let mut table = String::from("method,epochs_to_target,final_mse,failed\n");
    for method in Method::ALL {
        let run_cfg = ExperimentConfig { method, ..cfg.clone() };
        let (outcome, _, _) = train_denoise(&run_cfg, cfg.epsilon_list[0], &data)?;
        let sub = dir.join(method.as_str());
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        write_metrics_csv(&outcome.records, &sub.join("metrics.csv"))?;
        table.push_str(&format!(
            "{},{},{},{}\n",
            method.as_str(),
            outcome.epochs_to_target.map(|v| v.to_string()).unwrap_or_default(),
            opt_cell(outcome.records.last().and_then(|r| r.mse)),
            outcome.failure.is_some()
        ));
        out.push(outcome);
    }
    let path = dir.join("comparison.csv");
    std::fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
    Ok(out)
}
