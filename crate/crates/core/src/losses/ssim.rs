use crate::diffnet::Tensor;
use crate::error::{Error, Result};

use super::LossValue;

#[derive(Clone, Debug, PartialEq)]
pub struct SsimConfig {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the pixel values.
    pub dynamic_range: f64,
    pub clamp_min: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window_size: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            clamp_min: 1e-4,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size % 2 == 0 {
            return Err(Error::Config(format!("SSIM window size {} must be odd", self.window_size)));
        }
        if !(self.window_sigma > 0.0) {
            return Err(Error::Config("SSIM window sigma must be positive".into()));
        }
        if !(self.dynamic_range > 0.0) {
            return Err(Error::Config("SSIM dynamic range must be positive".into()));
        }
        if !(self.clamp_min > 0.0 && self.clamp_min < 1.0) {
            return Err(Error::Config(format!("SSIM clamp {} outside (0, 1)", self.clamp_min)));
        }
        Ok(())
    }

    fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable correlation of an `h × w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for r in 0..h {
        for c in 0..wo {
            rows[r * wo + c] = (0..k).map(|t| g[t] * img[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for r in 0..ho {
        for c in 0..wo {
            out[r * wo + c] = (0..k).map(|t| g[t] * rows[(r + t) * wo + c]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an `(h-k+1) × (w-k+1)` map back.
fn filter_adjoint(map: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for r in 0..ho {
        for c in 0..wo {
            let m = map[r * wo + c];
            for t in 0..k {
                rows[(r + t) * wo + c] += g[t] * m;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..wo {
            let m = rows[r * wo + c];
            for t in 0..k {
                out[r * w + c + t] += g[t] * m;
            }
        }
    }
    out
}

struct Stats {
    mean: f64,
    /// Partial derivative maps, see [`image_ssim`].
    da: Vec<f64>,
    db: Vec<f64>,
    dc: Vec<f64>,
}

/// Mean SSIM of one image pair and the maps `A, B, C` such that
/// `∂ mean/∂x = (Wᵀ A + x ⊙ Wᵀ B + y ⊙ Wᵀ C) / P`.
fn image_ssim(x: &[f64], y: &[f64], h: usize, w: usize, g: &[f64], cfg: &SsimConfig) -> Stats {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(x, h, w, g);
    let my = filter_valid(y, h, w, g);
    let exx = filter_valid(&sq(x, x), h, w, g);
    let eyy = filter_valid(&sq(y, y), h, w, g);
    let exy = filter_valid(&sq(x, y), h, w, g);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let p = mx.len();
    let mut da = vec![0.0; p];
    let mut db = vec![0.0; p];
    let mut dc = vec![0.0; p];
    let mut total = 0.0;
    for i in 0..p {
        let (ux, uy) = (mx[i], my[i]);
        let vx = exx[i] - ux * ux;
        let vy = eyy[i] - uy * uy;
        let cxy = exy[i] - ux * uy;
        let a1 = 2.0 * ux * uy + c1;
        let a2 = 2.0 * cxy + c2;
        let b1 = ux * ux + uy * uy + c1;
        let b2 = vx + vy + c2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        let d_ux = 2.0 * uy * a2 / (b1 * b2) - s * 2.0 * ux / b1;
        let d_vx = -s / b2;
        let d_cxy = 2.0 * a1 / (b1 * b2);
        da[i] = d_ux - 2.0 * ux * d_vx - uy * d_cxy;
        db[i] = 2.0 * d_vx;
        dc[i] = d_cxy;
    }
    Stats {
        mean: total / p as f64,
        da,
        db,
        dc,
    }
}

fn check_images(pred: &Tensor<f64>, target: &Tensor<f64>, cfg: &SsimConfig) -> Result<(usize, usize, usize)> {
    cfg.validate()?;
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "SSIM inputs differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (n, c, h, w) = pred.dims4()?;
    if c != 1 {
        return Err(Error::Shape(format!("SSIM expects one channel, got {c}")));
    }
    if h < cfg.window_size || w < cfg.window_size {
        return Err(Error::Shape(format!(
            "image {h}x{w} is smaller than the {0}x{0} SSIM window",
            cfg.window_size
        )));
    }
    Ok((n, h, w))
}

/// Per-image mean SSIM (unclamped).
pub fn ssim_map_mean(pred: &Tensor<f64>, target: &Tensor<f64>, cfg: &SsimConfig) -> Result<Vec<f64>> {
    let (n, h, w) = check_images(pred, target, cfg)?;
    let g = gaussian_window(cfg.window_size, cfg.window_sigma);
    let hw = h * w;
    Ok((0..n)
        .map(|i| {
            let r = i * hw..(i + 1) * hw;
            image_ssim(&pred.data()[r.clone()], &target.data()[r], h, w, &g, cfg).mean
        })
        .collect())
}

/// Batch mean of `-log clamp(mean SSIM_i, clamp_min, 1)`. Clamped images
/// contribute no gradient.
pub fn ssim_loss(pred: &Tensor<f64>, target: &Tensor<f64>, cfg: &SsimConfig) -> Result<LossValue> {
    let (n, h, w) = check_images(pred, target, cfg)?;
    let g = gaussian_window(cfg.window_size, cfg.window_sigma);
    let hw = h * w;
    let mut grad = Tensor::zeros(pred.shape());
    let mut value = 0.0;
    for i in 0..n {
        let r = i * hw..(i + 1) * hw;
        let x = &pred.data()[r.clone()];
        let y = &target.data()[r.clone()];
        let st = image_ssim(x, y, h, w, &g, cfg);
        let m = st.mean.clamp(cfg.clamp_min, 1.0);
        value += -m.ln();
        if st.mean <= cfg.clamp_min || st.mean >= 1.0 {
            continue;
        }
        let scale = -1.0 / (m * st.da.len() as f64 * n as f64);
        let ta = filter_adjoint(&st.da, h, w, &g);
        let tb = filter_adjoint(&st.db, h, w, &g);
        let tc = filter_adjoint(&st.dc, h, w, &g);
        for (q, gq) in grad.data_mut()[r].iter_mut().enumerate() {
            *gq = scale * (ta[q] + x[q] * tb[q] + y[q] * tc[q]);
        }
    }
    Ok(LossValue {
        value: value / n as f64,
        grad,
    })
}
