use crate::diffnet::Tensor;
use crate::error::{Error, Result};

use super::LossValue;

/// Mean squared error over every element.
pub fn pixel_loss(pred: &Tensor<f64>, target: &Tensor<f64>) -> Result<LossValue> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len().max(1) as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut value = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        value += d * d;
        *g = 2.0 * d / n;
    }
    Ok(LossValue { value: value / n, grad })
}

/// Squared distance between attention maps; `sa_real` is a constant target.
pub fn da_loss(sa_coarse: &Tensor<f64>, sa_real: &Tensor<f64>) -> Result<LossValue> {
    pixel_loss(sa_coarse, sa_real)
}
