use crate::diffnet::ops::sigmoid;
use crate::diffnet::Tensor;

use super::LossValue;

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Non-saturating generator loss `mean softplus(-logit)`.
pub fn adv_g_loss(fake_logits: &Tensor<f64>) -> LossValue {
    let n = fake_logits.len().max(1) as f64;
    let value = fake_logits.data().iter().map(|&z| softplus(-z)).sum::<f64>() / n;
    let grad = fake_logits.map(|z| -sigmoid(-z) / n);
    LossValue { value, grad }
}

/// Cross-entropy of the discriminator: `(real term, fake term)`, each with
/// the gradient for its own logits.
pub fn adv_d_loss(real_logits: &Tensor<f64>, fake_logits: &Tensor<f64>) -> (LossValue, LossValue) {
    let nr = real_logits.len().max(1) as f64;
    let nf = fake_logits.len().max(1) as f64;
    let real = LossValue {
        value: real_logits.data().iter().map(|&z| softplus(-z)).sum::<f64>() / nr,
        grad: real_logits.map(|z| -sigmoid(-z) / nr),
    };
    let fake = LossValue {
        value: fake_logits.data().iter().map(|&z| softplus(z)).sum::<f64>() / nf,
        grad: fake_logits.map(|z| sigmoid(z) / nf),
    };
    (real, fake)
}
