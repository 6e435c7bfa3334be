use ndarray::Array2;

use crate::diffnet::Tensor;
use crate::error::{Error, Result};
use crate::ot::{sinkhorn_divergence_with_grad, DiscreteMeasure, SinkhornConfig};

use super::LossValue;

/// How images become empirical measures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OtMode {
    /// Each flattened image is one atom; the batch is the measure.
    #[default]
    Batch,
    /// Each image is its own cloud of `(row, col, value)` atoms, compared
    /// with its paired target; the loss is averaged over pairs.
    PixelCloud,
}

impl std::str::FromStr for OtMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(OtMode::Batch),
            "pixel_cloud" | "pixel" => Ok(OtMode::PixelCloud),
            _ => Err(Error::Config(format!("unknown OT mode '{s}' (batch | pixel_cloud)"))),
        }
    }
}

fn flatten(t: &Tensor<f64>) -> Array2<f64> {
    Array2::from_shape_vec((t.batch(), t.sample_len()), t.data().to_vec()).expect("batch layout")
}

/// Debiased Sinkhorn divergence between the batch of predictions and the
/// batch of targets, with its envelope gradient.
pub fn sinkhorn_batch_loss(fake: &Tensor<f64>, real: &Tensor<f64>, cfg: &SinkhornConfig) -> Result<LossValue> {
    if fake.shape().get(1..) != real.shape().get(1..) || fake.batch() == 0 || real.batch() == 0 {
        return Err(Error::Shape(format!(
            "OT batches must be nonempty with equal image shapes: {:?} vs {:?}",
            fake.shape(),
            real.shape()
        )));
    }
    let x = DiscreteMeasure::uniform(flatten(fake))?;
    let y = DiscreteMeasure::uniform(flatten(real))?;
    let (value, g) = sinkhorn_divergence_with_grad(&x, &y, cfg)?;
    let grad = Tensor::new(fake.shape(), g.into_raw_vec_and_offset().0)?;
    Ok(LossValue { value, grad })
}

fn pixel_cloud(img: &[f64], h: usize, w: usize) -> Array2<f64> {
    let mut pts = Array2::zeros((img.len(), 3));
    for (q, &v) in img.iter().enumerate() {
        let pix = q % (h * w);
        pts[[q, 0]] = (pix / w) as f64 / h as f64;
        pts[[q, 1]] = (pix % w) as f64 / w as f64;
        pts[[q, 2]] = v;
    }
    pts
}

pub fn sinkhorn_loss(fake: &Tensor<f64>, real: &Tensor<f64>, cfg: &SinkhornConfig, mode: OtMode) -> Result<LossValue> {
    match mode {
        OtMode::Batch => sinkhorn_batch_loss(fake, real, cfg),
        OtMode::PixelCloud => {
            if fake.shape() != real.shape() {
                return Err(Error::Shape(format!(
                    "pixel-cloud OT pairs images one to one: {:?} vs {:?}",
                    fake.shape(),
                    real.shape()
                )));
            }
            let (n, _, h, w) = fake.dims4()?;
            let len = fake.sample_len();
            let mut grad = Tensor::zeros(fake.shape());
            let mut value = 0.0;
            for i in 0..n {
                let r = i * len..(i + 1) * len;
                let x = DiscreteMeasure::uniform(pixel_cloud(&fake.data()[r.clone()], h, w))?;
                let y = DiscreteMeasure::uniform(pixel_cloud(&real.data()[r.clone()], h, w))?;
                let (v, g) = sinkhorn_divergence_with_grad(&x, &y, cfg)?;
                value += v / n as f64;
                for (q, gq) in grad.data_mut()[r].iter_mut().enumerate() {
                    *gq = g[[q, 2]] / n as f64;
                }
            }
            Ok(LossValue { value, grad })
        }
    }
}
