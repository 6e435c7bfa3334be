use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    degrade, eval_metrics, gen_terrain, hillshade_prior, write_metrics_csv, write_sdem, HillshadeConfig,
    MetricsRecord, RasterF32,
};
use crate::diffnet::{checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, SsimConfig};
use crate::model::{build_siran, write_manifest, SiranConfig, SiranTrainer, TrainBatch, TrainConfig};
use crate::ot::SinkhornConfig;

use super::{prepare_run_dir, ExperimentConfig};

/// Degraded input, three-channel prior and truth for a set of patches.
#[derive(Clone, Debug)]
pub struct SrSplit {
    pub x: Tensor<f32>,
    pub z: Tensor<f32>,
    pub y: Tensor<f32>,
}

#[derive(Clone, Debug)]
pub struct SrDataset {
    pub train: SrSplit,
    pub test: SrSplit,
}

fn crop(r: &RasterF32, size: usize) -> Vec<f32> {
    (0..size)
        .flat_map(|i| r.data[i * r.width..i * r.width + size].iter().copied())
        .collect()
}

fn make_split(cfg: &ExperimentConfig, first: u64, count: usize) -> Result<SrSplit> {
    let p = cfg.sr_patch;
    let (mut xs, mut zs, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..count as u64 {
        let dem = gen_terrain(first + i, p + 1, cfg.roughness)?;
        let coarse = degrade(&dem, cfg.sr_factor, cfg.sr_blur)?;
        let prior = hillshade_prior(&dem, &HillshadeConfig::default())?;
        ys.extend(crop(&dem, p));
        xs.extend(crop(&coarse, p));
        for ch in &prior {
            zs.extend(crop(ch, p));
        }
    }
    Ok(SrSplit {
        x: Tensor::new(&[count, 1, p, p], xs)?,
        z: Tensor::new(&[count, 3, p, p], zs)?,
        y: Tensor::new(&[count, 1, p, p], ys)?,
    })
}

impl SrDataset {
    /// Synthetic terrain patches; train and test use disjoint terrain seeds.
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let base = cfg.seed.wrapping_mul(1_000_003);
        Ok(SrDataset {
            train: make_split(cfg, base, cfg.sr_train)?,
            test: make_split(cfg, base.wrapping_add(cfg.sr_train as u64), cfg.sr_test)?,
        })
    }
}

pub fn siran_config(cfg: &ExperimentConfig) -> SiranConfig {
    SiranConfig {
        base_channels: cfg.base_channels,
        n_dmrb_g: cfg.n_dmrb,
        n_dmrb_d: cfg.n_dmrb,
        rcb_per_dmrb: cfg.rcb_per_dmrb,
        scale_factor: 1,
        mlp_width: cfg.base_channels,
        patch_size: cfg.sr_patch,
        ..SiranConfig::default()
    }
}

pub fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    let weights = LossWeights {
        lambda_ot: if cfg.use_sinkhorn { cfg.weights.lambda_ot } else { 0.0 },
        lambda_da: if cfg.use_attention { cfg.weights.lambda_da } else { 0.0 },
        ..cfg.weights
    };
    TrainConfig {
        weights,
        ssim: SsimConfig::default(),
        sinkhorn: SinkhornConfig {
            epsilon: cfg.epsilon_list[0],
            max_iters: cfg.sinkhorn_iters,
            p: cfg.sinkhorn_p,
            ..SinkhornConfig::default()
        },
        ot_mode: cfg.ot_mode,
        lr_g: cfg.lr,
        lr_d: cfg.lr,
        detach_attention: cfg.detach_attention,
        use_prior: cfg.use_prior,
        use_attention: cfg.use_attention,
        use_psa: cfg.use_psa && cfg.use_attention,
        spectral_iters: 20,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrOutcome {
    pub records: Vec<MetricsRecord>,
    /// First epoch whose mean training pixel loss fell to the threshold.
    pub epochs_to_threshold: Option<usize>,
    pub test: MetricsRecord,
    pub bicubic: MetricsRecord,
    pub failure: Option<String>,
}

fn predict_all(t: &SiranTrainer, s: &SrSplit, batch: usize) -> Result<Tensor<f32>> {
    let n = s.x.batch();
    let mut parts = Vec::new();
    for start in (0..n).step_by(batch.max(1)) {
        let end = (start + batch).min(n);
        parts.push(t.predict(&s.x.slice_batch(start, end), &s.z.slice_batch(start, end))?);
    }
    let refs: Vec<&Tensor<f32>> = parts.iter().collect();
    Tensor::stack_batches(&refs)
}

fn mean_of(records: &[MetricsRecord], f: fn(&MetricsRecord) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = records.iter().filter_map(f).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Trains the toy model in memory and evaluates it on the test split.
pub fn train_sr(cfg: &ExperimentConfig, data: &SrDataset) -> Result<(SrOutcome, SiranTrainer)> {
    cfg.validate()?;
    let (g, d) = build_siran(&siran_config(cfg), cfg.seed)?;
    let mut trainer = SiranTrainer::new(g, d, train_config(cfg))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = data.train.x.batch();
    let mut order: Vec<usize> = (0..n).collect();
    let truth: Tensor<f64> = data.test.y.cast();
    let bicubic = eval_metrics(&data.test.x.cast(), &truth, 1.0)?;
    let mut out = SrOutcome {
        records: Vec::new(),
        epochs_to_threshold: None,
        test: MetricsRecord::default(),
        bicubic,
        failure: None,
    };
    let start = Instant::now();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut steps = Vec::new();
        for idx in order.chunks(cfg.batch) {
            let b = TrainBatch {
                x: data.train.x.select(idx),
                z: data.train.z.select(idx),
                y: data.train.y.select(idx),
            };
            match trainer.step(&b) {
                Ok(s) => steps.push(s.record),
                Err(e @ (Error::NonFiniteLoss { .. } | Error::Validation(_) | Error::Numerical { .. })) => {
                    out.failure = Some(format!("epoch {epoch}: {e}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if out.failure.is_some() {
            out.records.push(MetricsRecord {
                epoch,
                mse: Some(f64::NAN),
                ..MetricsRecord::default()
            });
            break;
        }
        let pred: Tensor<f64> = predict_all(&trainer, &data.test, cfg.batch)?.cast();
        let mut rec = eval_metrics(&pred, &truth, 1.0)?;
        rec.epoch = epoch;
        rec.wallclock_s = cfg.log_wallclock.then(|| start.elapsed().as_secs_f64());
        rec.l_p = mean_of(&steps, |r| r.l_p);
        rec.l_str = mean_of(&steps, |r| r.l_str);
        rec.l_adv = mean_of(&steps, |r| r.l_adv);
        rec.l_ot = mean_of(&steps, |r| r.l_ot);
        rec.l_da = mean_of(&steps, |r| r.l_da);
        rec.g_first = mean_of(&steps, |r| r.g_first);
        rec.g_hidden = mean_of(&steps, |r| r.g_hidden);
        if out.epochs_to_threshold.is_none() && rec.l_p.is_some_and(|l| l <= cfg.pixel_threshold) {
            out.epochs_to_threshold = Some(epoch);
        }
        out.test = rec.clone();
        out.records.push(rec);
    }
    Ok((out, trainer))
}

fn raster(t: &Tensor<f32>, i: usize) -> Result<RasterF32> {
    let (_, _, h, w) = t.dims4()?;
    RasterF32::new(h, w, t.slice_batch(i, i + 1).into_data())
}

/// Trains and writes metrics, bicubic baseline, checkpoints and sample
/// rasters under `root/<name>/`.
pub fn run_sr_toy(cfg: &ExperimentConfig, root: &Path) -> Result<SrOutcome> {
    cfg.validate()?;
    let data = SrDataset::generate(cfg)?;
    let dir = prepare_run_dir(cfg, root)?;
    let (out, trainer) = train_sr(cfg, &data)?;
    write_metrics_csv(&out.records, &dir.join("metrics.csv"))?;
    let mut bicubic = out.bicubic.clone();
    bicubic.epoch = 0;
    write_metrics_csv(&[bicubic], &dir.join("bicubic.csv"))?;
    if cfg.checkpoints {
        checkpoint::save(&trainer.g.net, &dir.join("generator.sdnc"))?;
        checkpoint::save(&trainer.d.net, &dir.join("discriminator.sdnc"))?;
        write_manifest(&trainer.g.cfg, cfg.seed, &dir.join("model.txt"))?;
    }
    let test = &data.test;
    let pred = predict_all(&trainer, test, cfg.batch)?;
    for i in 0..test.x.batch().min(4) {
        write_sdem(&raster(&pred, i)?, &dir.join(format!("pred_{i}.sdem")))?;
        write_sdem(&raster(&test.x, i)?, &dir.join(format!("input_{i}.sdem")))?;
        write_sdem(&raster(&test.y, i)?, &dir.join(format!("truth_{i}.sdem")))?;
    }
    Ok(out)
}
