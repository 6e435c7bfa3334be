use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::RasterF32;

fn normalize(v: &mut [f64]) {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let r = hi - lo;
    for x in v.iter_mut() {
        *x = if r > 0.0 { (*x - lo) / r } else { 0.0 };
    }
}

fn to_raster(h: usize, w: usize, v: &[f64]) -> RasterF32 {
    RasterF32::new(h, w, v.iter().map(|&x| x as f32).collect()).expect("finite terrain")
}

/// Diamond-square heightfield of side `size = 2^k + 1`, normalized to
/// [0, 1]. The displacement amplitude is multiplied by `roughness` at
/// every level.
pub fn gen_terrain(seed: u64, size: usize, roughness: f64) -> Result<RasterF32> {
    if size < 3 || !(size - 1).is_power_of_two() {
        return Err(Error::Validation(format!("terrain size {size} is not 2^k + 1")));
    }
    if !(roughness > 0.0 && roughness < 1.0) {
        return Err(Error::Validation(format!("roughness {roughness} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size;
    let mut z = vec![0.0f64; n * n];
    let last = n - 1;
    for &(r, c) in &[(0, 0), (0, last), (last, 0), (last, last)] {
        z[r * n + c] = rng.random_range(-1.0..1.0);
    }
    let mut amp = roughness;
    let mut step = last;
    while step > 1 {
        let half = step / 2;
        // Diamond: centres of squares.
        for r in (half..n).step_by(step) {
            for c in (half..n).step_by(step) {
                let avg = (z[(r - half) * n + c - half]
                    + z[(r - half) * n + c + half]
                    + z[(r + half) * n + c - half]
                    + z[(r + half) * n + c + half])
                    / 4.0;
                z[r * n + c] = avg + amp * rng.random_range(-1.0..1.0);
            }
        }
        // Square: edge midpoints, averaging the in-bounds neighbours.
        for r in (0..n).step_by(half) {
            let start = if (r / half) % 2 == 0 { half } else { 0 };
            for c in (start..n).step_by(step) {
                let mut sum = 0.0;
                let mut k = 0.0;
                if r >= half {
                    sum += z[(r - half) * n + c];
                    k += 1.0;
                }
                if r + half < n {
                    sum += z[(r + half) * n + c];
                    k += 1.0;
                }
                if c >= half {
                    sum += z[r * n + c - half];
                    k += 1.0;
                }
                if c + half < n {
                    sum += z[r * n + c + half];
                    k += 1.0;
                }
                z[r * n + c] = sum / k + amp * rng.random_range(-1.0..1.0);
            }
        }
        amp *= roughness;
        step = half;
    }
    normalize(&mut z);
    Ok(to_raster(n, n, &z))
}

fn gaussian_blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.into_iter().map(|t| t / total).collect();
    let clampi = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * src[r * w + clampi(c as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[clampi(r as isize + k as isize - radius, h) * w + c])
                .sum();
        }
    }
    out
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn keys(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Corner-aligned bicubic resampling of `ch × cw` samples onto `h × w`.
fn bicubic_up(src: &[f64], ch: usize, cw: usize, h: usize, w: usize) -> Vec<f64> {
    let scale = |n_out: usize, n_in: usize| {
        if n_out > 1 {
            (n_in - 1) as f64 / (n_out - 1) as f64
        } else {
            0.0
        }
    };
    let (sy, sx) = (scale(h, ch), scale(w, cw));
    let clampi = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let y = r as f64 * sy;
        let y0 = y.floor() as isize;
        for c in 0..w {
            let x = c as f64 * sx;
            let x0 = x.floor() as isize;
            let mut acc = 0.0;
            for dy in -1..=2 {
                let wy = keys(y - (y0 + dy) as f64);
                if wy == 0.0 {
                    continue;
                }
                let row = clampi(y0 + dy, ch);
                for dx in -1..=2 {
                    let wx = keys(x - (x0 + dx) as f64);
                    acc += wy * wx * src[row * cw + clampi(x0 + dx, cw)];
                }
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Gaussian blur, decimation by `factor`, and bicubic re-upsampling to the
/// original grid. `factor` must divide `height - 1` and `width - 1`.
pub fn degrade(dem: &RasterF32, factor: usize, blur_sigma: f64) -> Result<RasterF32> {
    let (h, w) = (dem.height, dem.width);
    if factor == 0 || (h - 1) % factor != 0 || (w - 1) % factor != 0 {
        return Err(Error::Validation(format!(
            "degrade factor {factor} must divide {}x{} (dimensions minus one)",
            h - 1,
            w - 1
        )));
    }
    if !(blur_sigma >= 0.0) {
        return Err(Error::Validation(format!("blur sigma {blur_sigma} is negative")));
    }
    let src: Vec<f64> = dem.data.iter().map(|&v| v as f64).collect();
    let blurred = gaussian_blur(&src, h, w, blur_sigma);
    let (ch, cw) = ((h - 1) / factor + 1, (w - 1) / factor + 1);
    let mut coarse = vec![0.0; ch * cw];
    for r in 0..ch {
        for c in 0..cw {
            coarse[r * cw + c] = blurred[r * factor * w + c * factor];
        }
    }
    let up = bicubic_up(&coarse, ch, cw, h, w);
    Ok(to_raster(h, w, &up))
}

#[derive(Clone, Debug, PartialEq)]
pub struct HillshadeConfig {
    /// Degrees clockwise from north.
    pub azimuth: f64,
    /// Degrees above the horizon.
    pub altitude: f64,
    /// Vertical exaggeration; the raster spans a unit square horizontally.
    pub z_factor: f64,
}

impl Default for HillshadeConfig {
    fn default() -> Self {
        HillshadeConfig {
            azimuth: 315.0,
            altitude: 45.0,
            z_factor: 1.0,
        }
    }
}

/// Pseudo multispectral prior: `[hillshade, slope, elevation]`, each in
/// [0, 1].
pub fn hillshade_prior(dem: &RasterF32, cfg: &HillshadeConfig) -> Result<[RasterF32; 3]> {
    let (h, w) = (dem.height, dem.width);
    if h < 3 || w < 3 {
        return Err(Error::Validation(format!("hillshade needs at least 3x3, got {h}x{w}")));
    }
    let z = |r: usize, c: usize| dem.at(r, c) as f64;
    let (dx, dy) = (1.0 / (w - 1) as f64, 1.0 / (h - 1) as f64);
    let az = cfg.azimuth.to_radians();
    let alt = cfg.altitude.to_radians();
    let light = [az.sin() * alt.cos(), az.cos() * alt.cos(), alt.sin()];
    let mut shade = vec![0.0; h * w];
    let mut slope = vec![0.0; h * w];
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(1), (r + 1).min(h - 1));
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let de = cfg.z_factor * (z(r, c1) - z(r, c0)) / ((c1 - c0) as f64 * dx);
            // Rows run southward.
            let dn = -cfg.z_factor * (z(r1, c) - z(r0, c)) / ((r1 - r0) as f64 * dy);
            let norm = (de * de + dn * dn + 1.0).sqrt();
            let lit = (-de * light[0] - dn * light[1] + light[2]) / norm;
            shade[r * w + c] = lit.clamp(0.0, 1.0);
            slope[r * w + c] = (de * de + dn * dn).sqrt().atan() / std::f64::consts::FRAC_PI_2;
        }
    }
    let mut elev: Vec<f64> = dem.data.iter().map(|&v| v as f64).collect();
    normalize(&mut elev);
    Ok([to_raster(h, w, &shade), to_raster(h, w, &slope), to_raster(h, w, &elev)])
}
