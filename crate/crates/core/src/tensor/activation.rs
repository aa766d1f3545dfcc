use super::{Scalar, Tensor};
use crate::error::Result;

pub fn tanh_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(T::tanh)
}

/// Backward of tanh given its *output* `y`: `grad * (1 - y²)`.
pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    grad.expect_shape(y.shape(), "tanh backward")?;
    let mut out = grad.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(y.data()) {
        *g *= T::one() - v * v;
    }
    Ok(out)
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward of ReLU given its *input* `x`; the gradient at exactly 0 is 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    grad.expect_shape(x.shape(), "relu backward")?;
    let mut out = grad.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(out)
}
