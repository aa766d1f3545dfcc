use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::DroneNet;
use crate::tensor::{ConvSpec, Scalar};

/// Half-width of the Glorot uniform range for one weight bank of `spec`.
pub fn glorot_bound(spec: &ConvSpec) -> f64 {
    let taps = spec.kernel_h * spec.kernel_w;
    let fan_in = spec.in_channels * taps;
    let fan_out = spec.out_channels * taps;
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform weights drawn independently per power bank, zero biases.
///
/// Draws happen in parameter-name order from a ChaCha8 stream, so a seed
/// fixes the model bit-for-bit regardless of precision or platform.
pub fn init_weights<T: Scalar>(model: &mut DroneNet<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<ConvSpec> = model
        .columns()
        .iter()
        .flatten()
        .chain(std::iter::once(model.fusion()))
        .flat_map(|l| std::iter::repeat_n(*l.spec(), l.q_max() + 1))
        .collect();
    let names = model.param_names();
    for ((param, name), spec) in model.params_mut().into_iter().zip(&names).zip(&specs) {
        if name.ends_with("bias") {
            param.data_mut().fill(T::zero());
            continue;
        }
        let a = glorot_bound(spec);
        for v in param.data_mut() {
            *v = T::from_f64(rng.random_range(-a..a));
        }
    }
}

/// Fusion bias set by [`init_for_training`].
pub const FUSION_BIAS_INIT: f64 = 0.01;

/// [`init_weights`], then a zero fusion kernel and a small positive fusion
/// bias. The model starts out predicting a flat, nearly empty map, which
/// keeps the output ReLU active through the first optimizer steps. With a
/// random fusion kernel the first Adam step moves every parameter by the
/// full learning rate in the same direction, which can push every output
/// below zero and stop all gradients.
pub fn init_for_training<T: Scalar>(model: &mut DroneNet<T>, seed: u64) {
    init_weights(model, seed);
    let mut params = model.params_mut();
    params
        .pop()
        .expect("fusion bias")
        .data_mut()
        .fill(T::from_f64(FUSION_BIAS_INIT));
    params
        .pop()
        .expect("fusion weight")
        .data_mut()
        .fill(T::zero());
}
