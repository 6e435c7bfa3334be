use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Architecture hyperparameters shared by the generator and discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct SiranConfig {
    pub base_channels: usize,
    pub n_dmrb_g: usize,
    pub n_dmrb_d: usize,
    pub rcb_per_dmrb: usize,
    pub scale_factor: usize,
    pub leaky_slope: f64,
    pub prior_channels: usize,
    /// Hidden width of the discriminator MLP head.
    pub mlp_width: usize,
    /// Spatial size of the full-resolution patches the networks are built for.
    pub patch_size: usize,
}

impl Default for SiranConfig {
    fn default() -> Self {
        SiranConfig {
            base_channels: 64,
            n_dmrb_g: 6,
            n_dmrb_d: 6,
            rcb_per_dmrb: 4,
            scale_factor: 1,
            leaky_slope: 0.2,
            prior_channels: 3,
            mlp_width: 64,
            patch_size: 64,
        }
    }
}

impl SiranConfig {
    pub fn toy() -> Self {
        SiranConfig {
            base_channels: 32,
            mlp_width: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_channels", self.base_channels),
            ("n_dmrb_g", self.n_dmrb_g),
            ("n_dmrb_d", self.n_dmrb_d),
            ("rcb_per_dmrb", self.rcb_per_dmrb),
            ("scale_factor", self.scale_factor),
            ("prior_channels", self.prior_channels),
            ("mlp_width", self.mlp_width),
            ("patch_size", self.patch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.base_channels % 2 != 0 {
            return Err(Error::Config("base_channels must be even".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope > 0.0) {
            return Err(Error::Config("leaky_slope must be positive".into()));
        }
        if self.patch_size < 4 {
            return Err(Error::Config("patch_size must be at least 4".into()));
        }
        if self.patch_size % self.scale_factor != 0 {
            return Err(Error::Config("patch_size must be a multiple of scale_factor".into()));
        }
        Ok(())
    }

    /// Side length of the generator's `x` input.
    pub fn input_size(&self) -> usize {
        self.patch_size / self.scale_factor
    }

    pub fn to_manifest(&self, seed: u64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "base_channels={}", self.base_channels);
        let _ = writeln!(s, "n_dmrb_g={}", self.n_dmrb_g);
        let _ = writeln!(s, "n_dmrb_d={}", self.n_dmrb_d);
        let _ = writeln!(s, "rcb_per_dmrb={}", self.rcb_per_dmrb);
        let _ = writeln!(s, "scale_factor={}", self.scale_factor);
        let _ = writeln!(s, "leaky_slope={:?}", self.leaky_slope);
        let _ = writeln!(s, "prior_channels={}", self.prior_channels);
        let _ = writeln!(s, "mlp_width={}", self.mlp_width);
        let _ = writeln!(s, "patch_size={}", self.patch_size);
        let _ = writeln!(s, "seed={seed}");
        s
    }

    pub fn from_manifest(text: &str) -> Result<(Self, u64)> {
        let mut cfg = SiranConfig::default();
        let mut seed = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("manifest line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |_| Error::Format(format!("manifest line {}: bad value for {key}", lineno + 1));
            match key {
                "base_channels" => cfg.base_channels = value.parse().map_err(bad)?,
                "n_dmrb_g" => cfg.n_dmrb_g = value.parse().map_err(bad)?,
                "n_dmrb_d" => cfg.n_dmrb_d = value.parse().map_err(bad)?,
                "rcb_per_dmrb" => cfg.rcb_per_dmrb = value.parse().map_err(bad)?,
                "scale_factor" => cfg.scale_factor = value.parse().map_err(bad)?,
                "leaky_slope" => {
                    cfg.leaky_slope = value
                        .parse()
                        .map_err(|_| Error::Format(format!("manifest: bad leaky_slope '{value}'")))?
                }
                "prior_channels" => cfg.prior_channels = value.parse().map_err(bad)?,
                "mlp_width" => cfg.mlp_width = value.parse().map_err(bad)?,
                "patch_size" => cfg.patch_size = value.parse().map_err(bad)?,
                "seed" => seed = Some(value.parse().map_err(bad)?),
                other => return Err(Error::Format(format!("manifest: unknown key '{other}'"))),
            }
        }
        let seed = seed.ok_or_else(|| Error::Format("manifest: missing seed".into()))?;
        cfg.validate()?;
        Ok((cfg, seed))
    }
}

pub fn write_manifest(cfg: &SiranConfig, seed: u64, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_manifest(seed)).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<(SiranConfig, u64)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SiranConfig::from_manifest(&text)
}
