use crate::data::MetricsRecord;
use crate::diffnet::{ops, tensor_spectral_norm, Activations, AdamState, NodeId, Param, Tensor};
use crate::error::{Error, Result};
use crate::losses::{
    adv_d_loss, adv_g_loss, da_loss, discriminator_total, generator_total, pixel_loss, sinkhorn_loss, ssim_loss,
    GeneratorParts, LossValue, LossWeights, OtMode, SsimConfig,
};
use crate::ot::SinkhornConfig;

use super::{
    condition_prior, psa_backward, psa_forward, sa_backward, sa_forward, DiscriminatorModel, GeneratorModel, PsaCache,
    PsaParams, SaCache,
};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub ssim: SsimConfig,
    pub sinkhorn: SinkhornConfig,
    pub ot_mode: OtMode,
    pub lr_g: f64,
    pub lr_d: f64,
    /// When false the generator loss also updates the discriminator
    /// through the attention map.
    pub detach_attention: bool,
    pub use_prior: bool,
    pub use_attention: bool,
    pub use_psa: bool,
    pub spectral_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            ssim: SsimConfig::default(),
            sinkhorn: SinkhornConfig::default(),
            ot_mode: OtMode::Batch,
            lr_g: 1e-4,
            lr_d: 1e-4,
            detach_attention: true,
            use_prior: true,
            use_attention: true,
            use_psa: true,
            spectral_iters: 20,
        }
    }
}

/// One minibatch: coarse input `x` `[N,1,s,s]`, prior `z` `[N,C,P,P]`,
/// target `y` `[N,1,P,P]`.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub x: Tensor<f32>,
    pub z: Tensor<f32>,
    pub y: Tensor<f32>,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub record: MetricsRecord,
    pub d_hash_before: u64,
    /// Discriminator hash at the moment the generator gradient was taken.
    pub d_hash_at_generator: u64,
}

struct Attention {
    a_s: Tensor<f64>,
    d_acts: Option<Activations<f32>>,
    sa: Option<SaCache>,
    psa: Option<PsaCache>,
}

/// Generator, discriminator, PSA scalars and their optimizer states.
#[derive(Clone, Debug)]
pub struct SiranTrainer {
    pub g: GeneratorModel,
    pub d: DiscriminatorModel,
    pub psa: PsaParams,
    pub cfg: TrainConfig,
    opt_g: AdamState<f32>,
    opt_d: AdamState<f32>,
    opt_psa: AdamState<f64>,
}

fn check(term: &str, l: &LossValue) -> Result<()> {
    if l.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { term: term.into() })
    }
}

fn psa_param(p: &PsaParams) -> Vec<Param<f64>> {
    vec![Param {
        name: "psa".into(),
        value: Tensor::new(&[3], p.to_array().to_vec()).expect("psa shape"),
    }]
}

impl SiranTrainer {
    pub fn new(g: GeneratorModel, d: DiscriminatorModel, cfg: TrainConfig) -> Result<Self> {
        cfg.weights.validate()?;
        let psa = PsaParams::default();
        Ok(SiranTrainer {
            opt_g: AdamState::new(g.net.params(), cfg.lr_g),
            opt_d: AdamState::new(d.net.params(), cfg.lr_d),
            opt_psa: AdamState::new(&psa_param(&psa), cfg.lr_g),
            g,
            d,
            psa,
            cfg,
        })
    }

    fn full_res(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let p = self.g.cfg.patch_size;
        if self.g.cfg.scale_factor > 1 {
            ops::resize_bilinear(x, p, p)
        } else {
            x.clone()
        }
    }

    fn attention(&self, x_full: &Tensor<f32>) -> Result<Attention> {
        let (n, _, h, w) = x_full.dims4()?;
        if !self.cfg.use_attention {
            return Ok(Attention {
                a_s: Tensor::full(&[n, 1, h, w], 1.0),
                d_acts: None,
                sa: None,
                psa: None,
            });
        }
        let acts = self.d.forward(x_full)?;
        let taps: Vec<Tensor<f64>> = self.d.block_taps.iter().map(|&t| acts.get(t).cast()).collect();
        let (map, sa) = sa_forward(&taps, h, w)?;
        let (a_s, psa) = if self.cfg.use_psa {
            let (a, c) = psa_forward(&map, &self.psa);
            (a, Some(c))
        } else {
            (map, None)
        };
        Ok(Attention {
            a_s,
            d_acts: Some(acts),
            sa: Some(sa),
            psa,
        })
    }

    /// Attention map used to condition the prior for input `x`.
    pub fn attention_map(&self, x: &Tensor<f32>) -> Result<Tensor<f64>> {
        Ok(self.attention(&self.full_res(x))?.a_s)
    }

    fn conditioned(&self, z: &Tensor<f32>, a_s: &Tensor<f64>) -> Result<Tensor<f32>> {
        if self.cfg.use_prior {
            condition_prior(z, a_s)
        } else {
            Ok(Tensor::zeros(z.shape()))
        }
    }

    /// Super-resolved prediction with the current networks.
    pub fn predict(&self, x: &Tensor<f32>, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let att = self.attention(&self.full_res(x))?;
        let zc = self.conditioned(z, &att.a_s)?;
        Ok(self.g.forward(x, &zc)?.get(self.g.net.output()).clone())
    }

    fn check_batch(&self, b: &TrainBatch) -> Result<usize> {
        let c = &self.g.cfg;
        let n = b.x.batch();
        let (p, s) = (c.patch_size, c.input_size());
        let expect = [
            ("x", b.x.shape(), vec![n, 1, s, s]),
            ("z", b.z.shape(), vec![n, c.prior_channels, p, p]),
            ("y", b.y.shape(), vec![n, 1, p, p]),
        ];
        for (name, got, want) in expect {
            if got != want.as_slice() {
                return Err(Error::Shape(format!("batch {name}: expected {want:?}, got {got:?}")));
            }
        }
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(n)
    }

    fn tap_seeds(&self, acts: &Activations<f32>, grads: &[Tensor<f64>], rows: (usize, usize), out: &mut [Tensor<f32>]) {
        for ((&id, g), dst) in self.d.block_taps.iter().zip(grads).zip(out.iter_mut()) {
            if dst.shape().is_empty() {
                *dst = Tensor::zeros(acts.get(id).shape());
            }
            let len = dst.sample_len();
            let span = &mut dst.data_mut()[rows.0 * len..rows.1 * len];
            for (d, &v) in span.iter_mut().zip(g.data()) {
                *d += v as f32;
            }
        }
    }

    fn discriminator_step(&mut self, b: &TrainBatch, x_full: &Tensor<f32>, n: usize) -> Result<Option<f64>> {
        let att0 = self.attention(x_full)?;
        let zc0 = self.conditioned(&b.z, &att0.a_s)?;
        let fake = self.g.forward(&b.x, &zc0)?.get(self.g.net.output()).clone();
        let stacked = Tensor::stack_batches(&[&b.y, &fake, x_full])?;
        let acts = self.d.forward(&stacked)?;
        let logits: Tensor<f64> = acts.get(self.d.net.output()).cast();
        let adv = adv_d_loss(&logits.slice_batch(0, n), &logits.slice_batch(n, 2 * n));
        check("L_ADV_D", &adv.0)?;
        check("L_ADV_D", &adv.1)?;

        let (_, _, h, w) = x_full.dims4()?;
        let mut tap_grads: Vec<Tensor<f32>> = vec![Tensor::zeros(&[]); self.d.block_taps.len()];
        let (da, da_value) = if self.cfg.use_attention {
            let taps_of = |lo: usize, hi: usize| -> Vec<Tensor<f64>> {
                self.d.block_taps.iter().map(|&t| acts.get(t).slice_batch(lo, hi).cast()).collect()
            };
            let (sa_y, cache_y) = sa_forward(&taps_of(0, n), h, w)?;
            let (sa_x, cache_x) = sa_forward(&taps_of(2 * n, 3 * n), h, w)?;
            let da = da_loss(&sa_x, &sa_y)?;
            check("L_DA", &da)?;
            (Some((cache_x, cache_y)), Some(da))
        } else {
            (None, None)
        };
        let zero_da = LossValue::zero(&[n, 1, h, w]);
        let total = discriminator_total(&adv, da_value.as_ref().unwrap_or(&zero_da), self.cfg.weights.lambda_da);
        if !total.value.is_finite() {
            return Err(Error::NonFiniteLoss { term: "L_D".into() });
        }
        if let Some((cache_x, cache_y)) = &da {
            if self.cfg.weights.lambda_da != 0.0 {
                let gx = sa_backward(cache_x, &total.da_grad);
                let neg = total.da_grad.map(|v| -v);
                let gy = sa_backward(cache_y, &neg);
                self.tap_seeds(&acts, &gx, (2 * n, 3 * n), &mut tap_grads);
                self.tap_seeds(&acts, &gy, (0, n), &mut tap_grads);
            }
        }
        let mut logit_grad = Tensor::<f32>::zeros(&[3 * n, 1]);
        for (d, &v) in logit_grad
            .data_mut()
            .iter_mut()
            .zip(total.real_logit_grad.data().iter().chain(total.fake_logit_grad.data()))
        {
            *d = v as f32;
        }
        let mut seeds: Vec<(NodeId, &Tensor<f32>)> = vec![(self.d.net.output(), &logit_grad)];
        for (&id, g) in self.d.block_taps.iter().zip(&tap_grads) {
            if !g.shape().is_empty() {
                seeds.push((id, g));
            }
        }
        let grads = self.d.net.backward_from(&acts, &seeds)?;
        self.opt_d.step(self.d.net.params_mut(), &grads.params)?;
        Ok(da_value.map(|d| d.value))
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self, b: &TrainBatch) -> Result<StepOutcome> {
        let n = self.check_batch(b)?;
        let d_hash_before = self.d.net.param_hash();
        let x_full = self.full_res(&b.x);
        let l_da = self.discriminator_step(b, &x_full, n)?;

        let att = self.attention(&x_full)?;
        let d_hash_at_generator = self.d.net.param_hash();
        let zc = self.conditioned(&b.z, &att.a_s)?;
        let g_acts = self.g.forward(&b.x, &zc)?;
        let pred: Tensor<f64> = g_acts.get(self.g.net.output()).cast();
        let target: Tensor<f64> = b.y.cast();
        let w = &self.cfg.weights;
        let shape = pred.shape().to_vec();

        let pixel = pixel_loss(&pred, &target)?;
        check("L_P", &pixel)?;
        let structural = if w.lambda_str != 0.0 {
            let l = ssim_loss(&pred, &target, &self.cfg.ssim)?;
            check("L_str", &l)?;
            Some(l)
        } else {
            None
        };
        let adversarial = if w.lambda_adv != 0.0 {
            let fake = pred.cast::<f32>();
            let acts = self.d.forward(&fake)?;
            let logits: Tensor<f64> = acts.get(self.d.net.output()).cast();
            let l = adv_g_loss(&logits);
            let dg = self.d.net.backward(&acts, &l.grad.cast())?;
            let grad = dg.input("img").expect("discriminator input").cast();
            let l = LossValue { value: l.value, grad };
            check("L_ADV", &l)?;
            Some(l)
        } else {
            None
        };
        let ot = if w.lambda_ot != 0.0 {
            let l = sinkhorn_loss(&pred, &target, &self.cfg.sinkhorn, self.cfg.ot_mode)?;
            check("L_OT", &l)?;
            Some(l)
        } else {
            None
        };
        let record_of = |l: &Option<LossValue>| l.as_ref().map(|l| l.value);
        let mut record = MetricsRecord {
            l_p: Some(pixel.value),
            l_str: record_of(&structural),
            l_adv: record_of(&adversarial),
            l_ot: record_of(&ot),
            l_da,
            ..MetricsRecord::default()
        };
        let parts = GeneratorParts {
            pixel,
            structural: structural.unwrap_or_else(|| LossValue::zero(&shape)),
            adversarial: adversarial.unwrap_or_else(|| LossValue::zero(&shape)),
            ot: ot.unwrap_or_else(|| LossValue::zero(&shape)),
        };
        let total = generator_total(&parts, w)?;
        check("L_G", &total)?;
        let grads = self.g.net.backward(&g_acts, &total.grad.cast())?;

        if self.cfg.use_attention && self.cfg.use_prior {
            let g_as = self.attention_grad(grads.input("z").expect("generator prior input"), &b.z)?;
            self.attention_update(&att, &g_as)?;
        }

        let iters = self.cfg.spectral_iters;
        let first = self.g.net.param_index(self.g.first_param()).expect("first layer");
        let hidden = self.g.net.param_index(&self.g.hidden_param()).expect("hidden layer");
        record.g_first = Some(tensor_spectral_norm(&grads.params[first], iters, 0));
        record.g_hidden = Some(tensor_spectral_norm(&grads.params[hidden], iters, 0));
        self.opt_g.step(self.g.net.params_mut(), &grads.params)?;
        Ok(StepOutcome {
            record,
            d_hash_before,
            d_hash_at_generator,
        })
    }

    fn attention_grad(&self, g_zc: &Tensor<f32>, z: &Tensor<f32>) -> Result<Tensor<f64>> {
        let (n, c, h, w) = z.dims4()?;
        let hw = h * w;
        let mut g = Tensor::<f64>::zeros(&[n, 1, h, w]);
        for ((dst, gz), zz) in g
            .data_mut()
            .chunks_mut(hw)
            .zip(g_zc.data().chunks(c * hw))
            .zip(z.data().chunks(c * hw))
        {
            for (gp, zp) in gz.chunks(hw).zip(zz.chunks(hw)) {
                for ((d, &a), &b) in dst.iter_mut().zip(gp).zip(zp) {
                    *d += a as f64 * b as f64;
                }
            }
        }
        Ok(g)
    }

    fn attention_update(&mut self, att: &Attention, g_as: &Tensor<f64>) -> Result<()> {
        let g_map = match &att.psa {
            Some(cache) => {
                let (g_map, gp) = psa_backward(cache, g_as);
                let mut params = psa_param(&self.psa);
                let grad = Tensor::new(&[3], gp.to_vec())?;
                self.opt_psa.step(&mut params, &[grad])?;
                let v = params[0].value.data();
                self.psa = PsaParams::from_array([v[0], v[1], v[2]]);
                g_map
            }
            None => g_as.clone(),
        };
        if self.cfg.detach_attention {
            return Ok(());
        }
        let (Some(acts), Some(sa)) = (&att.d_acts, &att.sa) else {
            return Ok(());
        };
        let tap_grads = sa_backward(sa, &g_map);
        let n = g_as.batch();
        let mut seeds_store: Vec<Tensor<f32>> = vec![Tensor::zeros(&[]); self.d.block_taps.len()];
        self.tap_seeds(acts, &tap_grads, (0, n), &mut seeds_store);
        let seeds: Vec<(NodeId, &Tensor<f32>)> = self.d.block_taps.iter().copied().zip(seeds_store.iter()).collect();
        let grads = self.d.net.backward_from(acts, &seeds)?;
        self.opt_d.step(self.d.net.params_mut(), &grads.params)
    }
}
