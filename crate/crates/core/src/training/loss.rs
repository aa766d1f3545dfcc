use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Loss<T> {
    pub value: f64,
    /// dL/d(pred).
    pub grad: Tensor<T>,
}

/// Pixel-wise squared Euclidean distance, summed over pixels and averaged
/// over the batch: `L = (1/N) Σ_i ‖pred_i − gt_i‖²`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Loss<T>> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(format!(
            "prediction {} and ground truth {} differ in shape",
            pred.shape(),
            gt.shape()
        )));
    }
    let batch = pred.shape().n.max(1) as f64;
    let scale = T::from_f64(2.0 / batch);
    let mut grad = pred.clone();
    let mut total = 0.0f64;
    for (g, &t) in grad.data_mut().iter_mut().zip(gt.data()) {
        let d = *g - t;
        total += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    Ok(Loss {
        value: total / batch,
        grad,
    })
}
