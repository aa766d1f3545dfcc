use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use super::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::tensor::Precision;

/// Hyper-parameters of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Images per optimizer step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Gaussian spread of the ground-truth kernels, in input pixels.
    pub sigma: f64,
    pub val_fraction: f64,
    pub augment: AugmentConfig,
    /// Save `epoch_NNNN.sonn` every this many epochs; 0 disables it.
    pub checkpoint_every: usize,
    pub precision: Precision,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 100,
            batch_size: 1,
            seed: 0,
            sigma: 7.0,
            val_fraction: 0.3,
            augment: AugmentConfig::default(),
            checkpoint_every: 0,
            precision: Precision::F32,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps >= 0.0) {
            return Err(Error::invalid(format!(
                "adam constants out of range: beta1 {}, beta2 {}, eps {}",
                a.beta1, a.beta2, a.eps
            )));
        }
        self.augment.validate()
    }
}
