use crate::diffnet::{Activations, Network, NetworkBuilder, NodeId, Tensor};
use crate::error::{Error, Result};

use super::SiranConfig;

/// Conditioned generator `ŷ = G(x, z ⊙ A_s)` with inputs `"x"` and `"z"`.
#[derive(Clone, Debug)]
pub struct GeneratorModel {
    pub net: Network<f32>,
    pub cfg: SiranConfig,
}

impl GeneratorModel {
    /// Parameter probed for the first-layer gradient norm.
    pub fn first_param(&self) -> &'static str {
        "g_head_x.weight"
    }

    /// Parameter probed for the hidden-layer gradient norm: the first conv
    /// of the middle generator block.
    pub fn hidden_param(&self) -> String {
        format!("g_dmrb{}.rcb1.conv_a.weight", self.cfg.n_dmrb_g.div_ceil(2))
    }

    pub fn forward(&self, x: &Tensor<f32>, zc: &Tensor<f32>) -> Result<Activations<f32>> {
        self.net.forward(&[("x", x), ("z", zc)])
    }
}

/// Discriminator with input `"img"`, one logit per sample and one tap per block.
#[derive(Clone, Debug)]
pub struct DiscriminatorModel {
    pub net: Network<f32>,
    pub cfg: SiranConfig,
    pub block_taps: Vec<NodeId>,
}

impl DiscriminatorModel {
    pub fn forward(&self, img: &Tensor<f32>) -> Result<Activations<f32>> {
        self.net.forward(&[("img", img)])
    }
}

fn dmrb(b: &mut NetworkBuilder<f32>, prefix: &str, x0: NodeId, c: usize, rcbs: usize, slope: f64) -> NodeId {
    let mut outs: Vec<NodeId> = Vec::with_capacity(rcbs);
    for k in 1..=rcbs {
        let inp = if k == 1 {
            x0
        } else {
            let mut parts = vec![x0];
            parts.extend(&outs);
            let cat = b.concat(&format!("{prefix}.cat{k}"), &parts);
            b.conv1x1(&format!("{prefix}.fuse{k}"), cat, c)
        };
        let a = b.conv3x3(&format!("{prefix}.rcb{k}.conv_a"), inp, c, 1);
        let a = b.leaky_relu(a, slope);
        let bb = b.conv3x3(&format!("{prefix}.rcb{k}.conv_b"), a, c, 1);
        outs.push(b.add(&format!("{prefix}.rcb{k}.out"), bb, inp));
    }
    let mut parts = vec![x0];
    parts.extend(&outs);
    let cat = b.concat(&format!("{prefix}.cat"), &parts);
    let fused = b.conv1x1(&format!("{prefix}.fuse"), cat, c);
    b.add(&format!("{prefix}.out"), fused, x0)
}

pub fn build_generator(cfg: &SiranConfig, seed: u64) -> Result<GeneratorModel> {
    cfg.validate()?;
    let c = cfg.base_channels;
    let p = cfg.patch_size;
    let s = cfg.input_size();
    let mut b = NetworkBuilder::<f32>::new(seed);
    let x = b.input("x", &[1, s, s]);
    let z = b.input("z", &[cfg.prior_channels, p, p]);
    let x_up = if cfg.scale_factor > 1 {
        b.upsample(x, cfg.scale_factor)
    } else {
        x
    };
    let hx = b.conv3x3("g_head_x", x_up, c / 2, 1);
    let hx = b.leaky_relu(hx, cfg.leaky_slope);
    let hz = b.conv3x3("g_head_z", z, c / 2, 1);
    let hz = b.leaky_relu(hz, cfg.leaky_slope);
    let mut h = b.concat("g_head", &[hx, hz]);
    for i in 1..=cfg.n_dmrb_g {
        h = dmrb(&mut b, &format!("g_dmrb{i}"), h, c, cfg.rcb_per_dmrb, cfg.leaky_slope);
    }
    let tail = b.conv3x3("g_tail", h, 1, 1);
    let skip = b.conv1x1("g_skip", x_up, 1);
    let out = b.add("g_out", tail, skip);
    let mut net = b.build(out)?;
    // start close to the identity on the coarse input
    for p in net.params_mut() {
        match p.name.as_str() {
            "g_skip.weight" => p.value.data_mut().fill(1.0),
            "g_tail.weight" => p.value.scale(1e-3),
            _ => {}
        }
    }
    Ok(GeneratorModel { net, cfg: cfg.clone() })
}

pub fn build_discriminator(cfg: &SiranConfig, seed: u64) -> Result<DiscriminatorModel> {
    cfg.validate()?;
    let c = cfg.base_channels;
    let mut b = NetworkBuilder::<f32>::new(seed);
    let img = b.input("img", &[1, cfg.patch_size, cfg.patch_size]);
    let e1 = b.conv3x3("d_enc1", img, c, 2);
    let e1 = b.leaky_relu(e1, cfg.leaky_slope);
    let e2 = b.conv3x3("d_enc2", e1, c, 2);
    let mut h = b.leaky_relu(e2, cfg.leaky_slope);
    let mut block_taps = Vec::with_capacity(cfg.n_dmrb_d);
    for i in 1..=cfg.n_dmrb_d {
        let name = format!("d_dmrb{i}");
        h = dmrb(&mut b, &name, h, c, cfg.rcb_per_dmrb, cfg.leaky_slope);
        b.tap(&name, h);
        block_taps.push(h);
    }
    let dec = b.conv3x3("d_dec", h, c, 1);
    let dec = b.leaky_relu(dec, cfg.leaky_slope);
    let pooled = b.global_avg_pool(dec);
    let m = b.dense("d_mlp1", pooled, cfg.mlp_width);
    let m = b.leaky_relu(m, cfg.leaky_slope);
    b.tap("d_mlp", m);
    let logit = b.dense("d_mlp2", m, 1);
    Ok(DiscriminatorModel {
        net: b.build(logit)?,
        cfg: cfg.clone(),
        block_taps,
    })
}

/// Builds both networks; the discriminator is seeded from `seed + 1`.
pub fn build_siran(cfg: &SiranConfig, seed: u64) -> Result<(GeneratorModel, DiscriminatorModel)> {
    Ok((build_generator(cfg, seed)?, build_discriminator(cfg, seed.wrapping_add(1))?))
}

/// `z ⊙ A_s`, broadcasting the `[N, 1, H, W]` map over the prior channels.
pub fn condition_prior(z: &Tensor<f32>, a_s: &Tensor<f64>) -> Result<Tensor<f32>> {
    let (n, c, h, w) = z.dims4()?;
    if a_s.shape() != [n, 1, h, w] {
        return Err(Error::Shape(format!(
            "attention map {:?} does not match prior {:?}",
            a_s.shape(),
            z.shape()
        )));
    }
    let hw = h * w;
    let mut out = z.clone();
    for (zs, a) in out.data_mut().chunks_mut(c * hw).zip(a_s.data().chunks(hw)) {
        for plane in zs.chunks_mut(hw) {
            for (v, &m) in plane.iter_mut().zip(a) {
                *v *= m as f32;
            }
        }
    }
    Ok(out)
}

pub fn generator_forward(g: &GeneratorModel, x: &Tensor<f32>, z: &Tensor<f32>, a_s: &Tensor<f64>) -> Result<Tensor<f32>> {
    if z.shape().get(1) != Some(&g.cfg.prior_channels) {
        return Err(Error::Shape(format!(
            "prior must have {} channels, got {:?}",
            g.cfg.prior_channels,
            z.shape()
        )));
    }
    let zc = condition_prior(z, a_s)?;
    let acts = g.forward(x, &zc)?;
    Ok(acts.get(g.net.output()).clone())
}
