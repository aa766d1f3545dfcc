//! Shared fixtures for the criterion benches.

use dronenet_core::{Shape, Tensor};

/// A deterministic input in [-1, 1] with the given shape.
pub fn wave_input(shape: Shape) -> Tensor<f32> {
    Tensor::from_fn(shape, |n, c, h, w| {
        let k = (n * 7919 + c * 104_729 + h * 31 + w * 17) as f32;
        (k * 0.013).sin()
    })
}
