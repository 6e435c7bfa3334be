use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{LossWeights, OtMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Denoise,
    EpsSweep,
    Baselines,
    SrToy,
    Smoothness,
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "denoise" => ExperimentKind::Denoise,
            "eps_sweep" => ExperimentKind::EpsSweep,
            "baselines" => ExperimentKind::Baselines,
            "sr_toy" => ExperimentKind::SrToy,
            "smoothness" => ExperimentKind::Smoothness,
            _ => return Err(Error::Config(format!("unknown experiment kind '{s}'"))),
        })
    }
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Denoise => "denoise",
            ExperimentKind::EpsSweep => "eps_sweep",
            ExperimentKind::Baselines => "baselines",
            ExperimentKind::SrToy => "sr_toy",
            ExperimentKind::Smoothness => "smoothness",
        }
    }
}

/// Training objective of the denoising runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    SinkhornGan,
    Gan,
    Wgan,
    WganGp,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sinkhorn_gan" => Method::SinkhornGan,
            "gan" => Method::Gan,
            "wgan" => Method::Wgan,
            "wgan_gp" => Method::WganGp,
            _ => return Err(Error::Config(format!("unknown method '{s}'"))),
        })
    }
}

impl Method {
    pub const ALL: [Method; 4] = [Method::SinkhornGan, Method::Gan, Method::Wgan, Method::WganGp];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SinkhornGan => "sinkhorn_gan",
            Method::Gan => "gan",
            Method::Wgan => "wgan",
            Method::WganGp => "wgan_gp",
        }
    }
}

/// Every knob of every experiment. Parsed from `key=value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub name: String,
    pub seed: u64,
    pub method: Method,
    pub epsilon_list: Vec<f64>,
    pub max_epochs: usize,
    pub target_mse: f64,
    pub batch: usize,
    pub lr: f64,
    pub subset_size: Option<usize>,
    pub test_size: Option<usize>,
    pub noise_sigma: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_p: f64,
    pub ot_mode: OtMode,
    pub clip: f64,
    pub gp_lambda: f64,
    pub weights: LossWeights,
    pub data_dir: PathBuf,
    pub log_wallclock: bool,
    pub checkpoints: bool,

    pub sr_train: usize,
    pub sr_test: usize,
    pub sr_patch: usize,
    pub sr_factor: usize,
    pub sr_blur: f64,
    pub roughness: f64,
    pub base_channels: usize,
    pub n_dmrb: usize,
    pub rcb_per_dmrb: usize,
    pub use_prior: bool,
    pub use_attention: bool,
    pub use_psa: bool,
    pub use_sinkhorn: bool,
    pub detach_attention: bool,
    pub pixel_threshold: f64,

    pub probe_pairs: usize,
    pub probe_points: usize,
    pub probe_dim: usize,
    pub probe_latent: usize,
    pub probe_delta: f64,
    pub lipschitz_scale: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Denoise,
            name: "run".into(),
            seed: 0,
            method: Method::SinkhornGan,
            epsilon_list: vec![0.1],
            max_epochs: 500,
            target_mse: 0.04,
            batch: 64,
            lr: 1e-3,
            subset_size: Some(6000),
            test_size: Some(1000),
            noise_sigma: 0.3,
            sinkhorn_iters: 10,
            sinkhorn_p: 2.0,
            ot_mode: OtMode::Batch,
            clip: 0.01,
            gp_lambda: 10.0,
            weights: LossWeights {
                lambda_da: 0.0,
                lambda_p: 0.0,
                lambda_str: 0.0,
                lambda_adv: 1.0,
                lambda_ot: 1.0,
            },
            data_dir: PathBuf::from("data/mnist5k"),
            log_wallclock: false,
            checkpoints: true,

            sr_train: 256,
            sr_test: 32,
            sr_patch: 32,
            sr_factor: 4,
            sr_blur: 1.0,
            roughness: 0.6,
            base_channels: 8,
            n_dmrb: 2,
            rcb_per_dmrb: 2,
            use_prior: true,
            use_attention: true,
            use_psa: true,
            use_sinkhorn: true,
            detach_attention: true,
            pixel_threshold: 0.0015,

            probe_pairs: 50,
            probe_points: 16,
            probe_dim: 4,
            probe_latent: 3,
            probe_delta: 1e-3,
            lipschitz_scale: 1.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean '{value}' for key '{key}'"))),
    }
}

fn parse_opt(key: &str, value: &str) -> Result<Option<usize>> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "none".into())
}

impl ExperimentConfig {
    /// Sets one field by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "kind" => self.kind = v.parse()?,
            "name" => {
                if v.is_empty() || v.contains(['/', '\\']) || v == "." || v == ".." {
                    return Err(Error::Config(format!("bad run name '{v}'")));
                }
                self.name = v.into()
            }
            "seed" => self.seed = parse(key, v)?,
            "method" => self.method = v.parse()?,
            "epsilon_list" => {
                self.epsilon_list = v
                    .split(',')
                    .map(|s| parse::<f64>(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "target_mse" => self.target_mse = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "subset_size" => self.subset_size = parse_opt(key, v)?,
            "test_size" => self.test_size = parse_opt(key, v)?,
            "noise_sigma" => self.noise_sigma = parse(key, v)?,
            "sinkhorn_iters" => self.sinkhorn_iters = parse(key, v)?,
            "sinkhorn_p" => self.sinkhorn_p = parse(key, v)?,
            "ot_mode" => self.ot_mode = v.parse()?,
            "clip" => self.clip = parse(key, v)?,
            "gp_lambda" => self.gp_lambda = parse(key, v)?,
            "lambda_da" => self.weights.lambda_da = parse(key, v)?,
            "lambda_p" => self.weights.lambda_p = parse(key, v)?,
            "lambda_str" => self.weights.lambda_str = parse(key, v)?,
            "lambda_adv" => self.weights.lambda_adv = parse(key, v)?,
            "lambda_ot" => self.weights.lambda_ot = parse(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "log_wallclock" => self.log_wallclock = parse_bool(key, v)?,
            "checkpoints" => self.checkpoints = parse_bool(key, v)?,
            "sr_train" => self.sr_train = parse(key, v)?,
            "sr_test" => self.sr_test = parse(key, v)?,
            "sr_patch" => self.sr_patch = parse(key, v)?,
            "sr_factor" => self.sr_factor = parse(key, v)?,
            "sr_blur" => self.sr_blur = parse(key, v)?,
            "roughness" => self.roughness = parse(key, v)?,
            "base_channels" => self.base_channels = parse(key, v)?,
            "n_dmrb" => self.n_dmrb = parse(key, v)?,
            "rcb_per_dmrb" => self.rcb_per_dmrb = parse(key, v)?,
            "use_prior" => self.use_prior = parse_bool(key, v)?,
            "use_attention" => self.use_attention = parse_bool(key, v)?,
            "use_psa" => self.use_psa = parse_bool(key, v)?,
            "use_sinkhorn" => self.use_sinkhorn = parse_bool(key, v)?,
            "detach_attention" => self.detach_attention = parse_bool(key, v)?,
            "pixel_threshold" => self.pixel_threshold = parse(key, v)?,
            "probe_pairs" => self.probe_pairs = parse(key, v)?,
            "probe_points" => self.probe_points = parse(key, v)?,
            "probe_dim" => self.probe_dim = parse(key, v)?,
            "probe_latent" => self.probe_latent = parse(key, v)?,
            "probe_delta" => self.probe_delta = parse(key, v)?,
            "lipschitz_scale" => self.lipschitz_scale = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        self.set(k, v)
    }

    /// Defaults for one experiment kind.
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            kind,
            name: kind.as_str().into(),
            ..ExperimentConfig::default()
        };
        match kind {
            ExperimentKind::Denoise | ExperimentKind::Baselines => base,
            ExperimentKind::EpsSweep | ExperimentKind::Smoothness => ExperimentConfig {
                epsilon_list: vec![0.001, 0.1, 10.0],
                ..base
            },
            ExperimentKind::SrToy => ExperimentConfig {
                lr: 1e-4,
                batch: 8,
                max_epochs: 40,
                weights: LossWeights::default(),
                ..base
            },
        }
    }

    /// Parses `key=value` lines over the defaults of the declared `kind`.
    pub fn parse(text: &str) -> Result<Self> {
        let kind = text
            .lines()
            .filter_map(|l| l.split('#').next()?.split_once('='))
            .find(|(k, _)| k.trim() == "kind")
            .map(|(_, v)| v.trim().parse())
            .transpose()?
            .unwrap_or(ExperimentKind::Denoise);
        let mut cfg = ExperimentConfig::for_kind(kind);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", i + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.target_mse > 0.0) {
            return bad("target_mse must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.epsilon_list.is_empty() {
            return bad("epsilon_list must be nonempty");
        }
        if self.epsilon_list.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return bad("every epsilon must be positive");
        }
        if !(self.noise_sigma >= 0.0) || !(self.clip > 0.0) || !(self.gp_lambda >= 0.0) {
            return bad("noise_sigma, clip and gp_lambda must be nonnegative (clip positive)");
        }
        if self.sinkhorn_iters == 0 {
            return bad("sinkhorn_iters must be at least 1");
        }
        if self.subset_size == Some(0) || self.test_size == Some(0) {
            return bad("subset sizes must be positive");
        }
        if self.sr_train == 0 || self.sr_test == 0 {
            return bad("sr_train and sr_test must be positive");
        }
        if self.sr_factor == 0 || self.sr_patch % self.sr_factor != 0 || !self.sr_patch.is_power_of_two() {
            return bad("sr_patch must be a power of two divisible by sr_factor");
        }
        if !(self.pixel_threshold > 0.0) {
            return bad("pixel_threshold must be positive");
        }
        if self.probe_pairs == 0 || self.probe_points == 0 || self.probe_dim == 0 || self.probe_latent == 0 {
            return bad("probe sizes must be positive");
        }
        if !(self.probe_delta > 0.0) || !(self.lipschitz_scale > 0.0) {
            return bad("probe_delta and lipschitz_scale must be positive");
        }
        self.weights.validate()
    }

    /// Canonical `key=value` rendering; parsing it yields `self`.
    pub fn echo(&self) -> String {
        let w = &self.weights;
        let eps: Vec<String> = self.epsilon_list.iter().map(|e| format!("{e:?}")).collect();
        let mode = match self.ot_mode {
            OtMode::Batch => "batch",
            OtMode::PixelCloud => "pixel_cloud",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("kind", self.kind.as_str().into()),
            ("name", self.name.clone()),
            ("seed", self.seed.to_string()),
            ("method", self.method.as_str().into()),
            ("epsilon_list", eps.join(",")),
            ("max_epochs", self.max_epochs.to_string()),
            ("target_mse", format!("{:?}", self.target_mse)),
            ("batch", self.batch.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("subset_size", fmt_opt(self.subset_size)),
            ("test_size", fmt_opt(self.test_size)),
            ("noise_sigma", format!("{:?}", self.noise_sigma)),
            ("sinkhorn_iters", self.sinkhorn_iters.to_string()),
            ("sinkhorn_p", format!("{:?}", self.sinkhorn_p)),
            ("ot_mode", mode.into()),
            ("clip", format!("{:?}", self.clip)),
            ("gp_lambda", format!("{:?}", self.gp_lambda)),
            ("lambda_da", format!("{:?}", w.lambda_da)),
            ("lambda_p", format!("{:?}", w.lambda_p)),
            ("lambda_str", format!("{:?}", w.lambda_str)),
            ("lambda_adv", format!("{:?}", w.lambda_adv)),
            ("lambda_ot", format!("{:?}", w.lambda_ot)),
            ("data_dir", self.data_dir.display().to_string()),
            ("log_wallclock", self.log_wallclock.to_string()),
            ("checkpoints", self.checkpoints.to_string()),
            ("sr_train", self.sr_train.to_string()),
            ("sr_test", self.sr_test.to_string()),
            ("sr_patch", self.sr_patch.to_string()),
            ("sr_factor", self.sr_factor.to_string()),
            ("sr_blur", format!("{:?}", self.sr_blur)),
            ("roughness", format!("{:?}", self.roughness)),
            ("base_channels", self.base_channels.to_string()),
            ("n_dmrb", self.n_dmrb.to_string()),
            ("rcb_per_dmrb", self.rcb_per_dmrb.to_string()),
            ("use_prior", self.use_prior.to_string()),
            ("use_attention", self.use_attention.to_string()),
            ("use_psa", self.use_psa.to_string()),
            ("use_sinkhorn", self.use_sinkhorn.to_string()),
            ("detach_attention", self.detach_attention.to_string()),
            ("pixel_threshold", format!("{:?}", self.pixel_threshold)),
            ("probe_pairs", self.probe_pairs.to_string()),
            ("probe_points", self.probe_points.to_string()),
            ("probe_dim", self.probe_dim.to_string()),
            ("probe_latent", self.probe_latent.to_string()),
            ("probe_delta", format!("{:?}", self.probe_delta)),
            ("lipschitz_scale", format!("{:?}", self.lipschitz_scale)),
        ];
        let mut s = String::new();
        for (k, v) in pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
