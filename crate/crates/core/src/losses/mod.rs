//! Training objectives with gradients taken with respect to their first
//! (predicted) argument. Values and gradients are accumulated in `f64`.

mod adversarial;
mod batch_ot;
mod pixel;
mod ssim;
mod total;

pub use adversarial::{adv_d_loss, adv_g_loss, softplus};
pub use batch_ot::{sinkhorn_batch_loss, sinkhorn_loss, OtMode};
pub use pixel::{da_loss, pixel_loss};
pub use ssim::{gaussian_window, ssim_loss, ssim_map_mean, SsimConfig};
pub use total::{discriminator_total, generator_total, DiscriminatorLoss, GeneratorParts, LossWeights};

use crate::diffnet::Tensor;

#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    /// Shaped like the prediction (or the logits, for adversarial terms).
    pub grad: Tensor<f64>,
}

impl LossValue {
    pub fn zero(shape: &[usize]) -> Self {
        LossValue {
            value: 0.0,
            grad: Tensor::zeros(shape),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad.all_finite()
    }
}
