use crate::diffnet::{ops, Tensor};
use crate::error::{Error, Result};

/// Per-sample min–max scaling of a `[N, ...]` tensor to `[0, 1]`.
/// Constant samples map to zeros.
pub fn minmax_normalize(raw: &Tensor<f64>) -> Tensor<f64> {
    let len = raw.sample_len();
    let mut out = raw.clone();
    for row in out.data_mut().chunks_mut(len) {
        let (lo, hi) = bounds(row);
        let range = hi - lo;
        for v in row.iter_mut() {
            *v = if range > 0.0 { ((*v - lo) / range).clamp(0.0, 1.0) } else { 0.0 };
        }
    }
    out
}

/// Gradient of [`minmax_normalize`] with respect to `raw`.
pub fn minmax_backward(raw: &Tensor<f64>, grad_out: &Tensor<f64>) -> Tensor<f64> {
    let len = raw.sample_len();
    let mut g = Tensor::zeros(raw.shape());
    for ((s, go), gs) in raw
        .data()
        .chunks(len)
        .zip(grad_out.data().chunks(len))
        .zip(g.data_mut().chunks_mut(len))
    {
        let (lo, hi) = bounds(s);
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        let argmin = s.iter().position(|&v| v == lo).unwrap_or(0);
        let argmax = s.iter().position(|&v| v == hi).unwrap_or(0);
        let r2 = range * range;
        let mut to_min = 0.0;
        let mut to_max = 0.0;
        for ((&sq, &gq), out) in s.iter().zip(go).zip(gs.iter_mut()) {
            *out = gq / range;
            to_min += gq * (sq - hi) / r2;
            to_max -= gq * (sq - lo) / r2;
        }
        gs[argmin] += to_min;
        gs[argmax] += to_max;
    }
    g
}

fn bounds(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Intermediate values of [`sa_forward`] needed for its backward pass.
#[derive(Clone, Debug)]
pub struct SaCache {
    tap_shapes: Vec<Vec<usize>>,
    resized: Vec<Tensor<f64>>,
    raw: Tensor<f64>,
}

/// Attention map `[N, 1, h, w]` from discriminator taps `[N, C_i, h_i, w_i]`:
/// each tap is resized to `h × w`, absolute values are summed over channels
/// and taps, and each sample is min–max normalized.
pub fn sa_forward(taps: &[Tensor<f64>], h: usize, w: usize) -> Result<(Tensor<f64>, SaCache)> {
    let first = taps
        .first()
        .ok_or_else(|| Error::Validation("spatial attention needs at least one tap".into()))?;
    let n = first.batch();
    let mut raw = Tensor::zeros(&[n, 1, h, w]);
    let mut resized = Vec::with_capacity(taps.len());
    let mut tap_shapes = Vec::with_capacity(taps.len());
    for tap in taps {
        let (tn, c, th, tw) = tap.dims4()?;
        if tn != n {
            return Err(Error::Shape(format!("tap batch {tn} differs from {n}")));
        }
        let r = if (th, tw) == (h, w) {
            tap.clone()
        } else {
            ops::resize_bilinear(tap, h, w)
        };
        for (dst, src) in raw.data_mut().chunks_mut(h * w).zip(r.data().chunks(c * h * w)) {
            for plane in src.chunks(h * w) {
                for (d, &v) in dst.iter_mut().zip(plane) {
                    *d += v.abs();
                }
            }
        }
        tap_shapes.push(tap.shape().to_vec());
        resized.push(r);
    }
    let map = minmax_normalize(&raw);
    Ok((map, SaCache { tap_shapes, resized, raw }))
}

pub fn d_spatial_attention(taps: &[Tensor<f64>], h: usize, w: usize) -> Result<Tensor<f64>> {
    sa_forward(taps, h, w).map(|(m, _)| m)
}

/// Gradients with respect to each tap given the gradient of the map.
pub fn sa_backward(cache: &SaCache, grad_map: &Tensor<f64>) -> Vec<Tensor<f64>> {
    let g_raw = minmax_backward(&cache.raw, grad_map);
    let hw = cache.raw.sample_len();
    cache
        .resized
        .iter()
        .zip(&cache.tap_shapes)
        .map(|(r, shape)| {
            let c = r.shape()[1];
            let mut g = Tensor::zeros(r.shape());
            for ((dst, src), gr) in g
                .data_mut()
                .chunks_mut(c * hw)
                .zip(r.data().chunks(c * hw))
                .zip(g_raw.data().chunks(hw))
            {
                for (dplane, splane) in dst.chunks_mut(hw).zip(src.chunks(hw)) {
                    for ((d, &s), &gq) in dplane.iter_mut().zip(splane).zip(gr) {
                        *d = if s > 0.0 {
                            gq
                        } else if s < 0.0 {
                            -gq
                        } else {
                            0.0
                        };
                    }
                }
            }
            if shape[..] == r.shape()[..] {
                g
            } else {
                ops::resize_bilinear_backward(shape, &g)
            }
        })
        .collect()
}

/// Learnable scalars of the single-channel PSA block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsaParams {
    /// Spatial conv1x1 weight.
    pub weight: f64,
    pub bias: f64,
    /// Channel gate, passed through a sigmoid.
    pub gate: f64,
}

impl Default for PsaParams {
    fn default() -> Self {
        PsaParams {
            weight: 4.0,
            bias: 0.0,
            gate: 0.0,
        }
    }
}

impl PsaParams {
    pub fn to_array(self) -> [f64; 3] {
        [self.weight, self.bias, self.gate]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        PsaParams {
            weight: a[0],
            bias: a[1],
            gate: a[2],
        }
    }
}

#[derive(Clone, Debug)]
pub struct PsaCache {
    map: Tensor<f64>,
    soft: Tensor<f64>,
    raw: Tensor<f64>,
    params: PsaParams,
}

/// `minmax(sigmoid(gate) · HW · softmax(weight · m + bias))` per sample.
pub fn psa_forward(map: &Tensor<f64>, params: &PsaParams) -> (Tensor<f64>, PsaCache) {
    let hw = map.sample_len();
    let pre = map.map(|m| params.weight * m + params.bias);
    let soft = ops::softmax(&pre);
    let k = ops::sigmoid(params.gate) * hw as f64;
    let raw = soft.map(|s| k * s);
    let out = minmax_normalize(&raw);
    let cache = PsaCache {
        map: map.clone(),
        soft,
        raw,
        params: *params,
    };
    (out, cache)
}

pub fn psa(map: &Tensor<f64>, params: &PsaParams) -> Tensor<f64> {
    psa_forward(map, params).0
}

/// Returns the gradient with respect to the input map and to
/// `[weight, bias, gate]`.
pub fn psa_backward(cache: &PsaCache, grad_out: &Tensor<f64>) -> (Tensor<f64>, [f64; 3]) {
    let hw = cache.map.sample_len();
    let p = cache.params;
    let sig = ops::sigmoid(p.gate);
    let k = sig * hw as f64;
    let g_raw = minmax_backward(&cache.raw, grad_out);
    let mut g_gate = 0.0;
    for (&g, &s) in g_raw.data().iter().zip(cache.soft.data()) {
        g_gate += g * s * hw as f64 * sig * (1.0 - sig);
    }
    let g_soft = g_raw.map(|g| g * k);
    let g_pre = ops::softmax_backward(&cache.soft, &g_soft);
    let mut g_w = 0.0;
    let mut g_b = 0.0;
    for (&g, &m) in g_pre.data().iter().zip(cache.map.data()) {
        g_w += g * m;
        g_b += g;
    }
    let g_map = g_pre.map(|g| g * p.weight);
    (g_map, [g_w, g_b, g_gate])
}
