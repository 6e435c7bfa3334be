use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const SDEM_MAGIC: &[u8; 4] = b"SDEM";

#[derive(Clone, Debug, PartialEq)]
pub struct RasterF32 {
    pub height: usize,
    pub width: usize,
    /// Row-major.
    pub data: Vec<f32>,
    pub nodata: Option<f32>,
}

impl RasterF32 {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!("raster must be at least 1x1, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "raster {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("raster contains non-finite values".into()));
        }
        Ok(RasterF32 {
            height,
            width,
            data,
            nodata: None,
        })
    }

    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.width + c]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// `SDEM` magic, `u32` height, `u32` width, `u32` reserved (0), then
/// little-endian `f32` samples.
pub fn write_sdem(raster: &RasterF32, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * raster.data.len());
    buf.extend_from_slice(SDEM_MAGIC);
    buf.extend_from_slice(&(raster.height as u32).to_le_bytes());
    buf.extend_from_slice(&(raster.width as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in &raster.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_sdem(path: &Path) -> Result<RasterF32> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 16 || &buf[..4] != SDEM_MAGIC {
        return Err(Error::Format(format!("{}: not an SDEM raster", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap()) as usize;
    let (h, w) = (word(4), word(8));
    let body = &buf[16..];
    if body.len() != 4 * h * w {
        return Err(Error::Format(format!(
            "{}: {h}x{w} raster needs {} payload bytes, found {}",
            path.display(),
            4 * h * w,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    RasterF32::new(h, w, data)
}

/// 16-bit binary PGM preview; values are clamped to [0, 1] and scaled to
/// 0..=65535.
pub fn write_pgm(raster: &RasterF32, path: &Path) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n65535\n", raster.width, raster.height).into_bytes();
    for &v in &raster.data {
        let s = (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16;
        buf.extend_from_slice(&s.to_be_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
