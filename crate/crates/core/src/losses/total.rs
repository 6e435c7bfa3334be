use crate::diffnet::Tensor;
use crate::error::{Error, Result};

use super::LossValue;

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_da: f64,
    pub lambda_p: f64,
    pub lambda_str: f64,
    pub lambda_adv: f64,
    pub lambda_ot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_da: 0.1,
            lambda_p: 100.0,
            lambda_str: 1.0,
            lambda_adv: 1.0,
            lambda_ot: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_DA", self.lambda_da),
            ("lambda_P", self.lambda_p),
            ("lambda_str", self.lambda_str),
            ("lambda_ADV", self.lambda_adv),
            ("lambda_OT", self.lambda_ot),
        ];
        for (name, v) in all {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Generator terms, every gradient taken with respect to the prediction.
#[derive(Clone, Debug)]
pub struct GeneratorParts {
    pub pixel: LossValue,
    pub structural: LossValue,
    pub adversarial: LossValue,
    pub ot: LossValue,
}

pub fn generator_total(parts: &GeneratorParts, w: &LossWeights) -> Result<LossValue> {
    let terms = [
        (w.lambda_p, &parts.pixel),
        (w.lambda_str, &parts.structural),
        (w.lambda_adv, &parts.adversarial),
        (w.lambda_ot, &parts.ot),
    ];
    let shape = parts.pixel.grad.shape();
    let mut grad = Tensor::zeros(shape);
    let mut value = 0.0;
    for (lambda, t) in terms {
        if t.grad.shape() != shape {
            return Err(Error::Shape(format!(
                "generator loss parts disagree on shape: {:?} vs {:?}",
                t.grad.shape(),
                shape
            )));
        }
        if lambda == 0.0 {
            continue;
        }
        value += lambda * t.value;
        for (g, &d) in grad.data_mut().iter_mut().zip(t.grad.data()) {
            *g += lambda * d;
        }
    }
    Ok(LossValue { value, grad })
}

/// Discriminator objective split by where each gradient goes.
#[derive(Clone, Debug)]
pub struct DiscriminatorLoss {
    pub value: f64,
    pub real_logit_grad: Tensor<f64>,
    pub fake_logit_grad: Tensor<f64>,
    /// Gradient for the coarse-input attention map, already scaled by λ_DA.
    pub da_grad: Tensor<f64>,
}

pub fn discriminator_total(adv: &(LossValue, LossValue), da: &LossValue, lambda_da: f64) -> DiscriminatorLoss {
    let mut da_grad = da.grad.clone();
    da_grad.scale(lambda_da);
    DiscriminatorLoss {
        value: adv.0.value + adv.1.value + lambda_da * da.value,
        real_logit_grad: adv.0.grad.clone(),
        fake_logit_grad: adv.1.grad.clone(),
        da_grad,
    }
}
