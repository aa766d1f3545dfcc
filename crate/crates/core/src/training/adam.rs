use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments, one pair of accumulators per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, config: AdamConfig) -> Self {
        let m: Vec<Tensor<T>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        AdamState {
            config,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// One update: `θ ← θ − lr · m̂ / (√v̂ + ε)`.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            p.expect_shape(m.shape(), "adam parameter")?;
            g.expect_shape(m.shape(), "adam gradient")?;
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.t as i32;
        let bc1 = T::from_f64(1.0 - beta1.powi(t));
        let bc2 = T::from_f64(1.0 - beta2.powi(t));
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
        let (lr, eps) = (T::from_f64(lr), T::from_f64(eps));
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::full(Shape::new(1, 1, 1, 1), v)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(1.5);
        let mut adam = AdamState::new([&p], AdamConfig::default());
        adam.step(&mut [&mut p], &[scalar(0.0)], 1e-3).unwrap();
        assert_eq!(p.data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.002, 250.0] {
            let mut p = scalar(0.0);
            let mut adam = AdamState::new([&p], AdamConfig::default());
            adam.step(&mut [&mut p], &[scalar(g)], 1e-4).unwrap();
            assert!((p.data()[0] + 1e-4 * f64::signum(g)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_betas_give_sign_descent() {
        let cfg = AdamConfig {
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
        };
        let mut p = scalar(0.0);
        let mut adam = AdamState::new([&p], cfg);
        for (k, g) in [0.3, -7.0, 1e-6, -2.5].into_iter().enumerate() {
            let before = p.data()[0];
            adam.step(&mut [&mut p], &[scalar(g)], 0.01).unwrap();
            assert_eq!(p.data()[0], before - 0.01 * g.signum(), "step {k}");
        }
    }

    #[test]
    fn rejects_mismatched_lists() {
        let mut p = scalar(0.0);
        let mut adam = AdamState::new([&p], AdamConfig::default());
        assert!(adam.step(&mut [&mut p], &[], 0.1).is_err());
        assert!(adam
            .step(&mut [&mut p], &[Tensor::zeros(Shape::new(1, 1, 1, 2))], 0.1)
            .is_err());
    }
}
