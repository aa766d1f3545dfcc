use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::augment::augment;
use super::config::TrainConfig;
use super::loss::mse_loss;
use super::split::split_dataset;
use crate::error::{Error, Result};
use crate::groundtruth::{density_map_from_points, downsample_gt, Sample};
use crate::net::{save_model, DroneNet, DroneNetConfig, Gradients};
use crate::tensor::{Scalar, Tensor};

pub const LOG_HEADER: &str = "epoch,train_loss,val_mae";
pub const TIMING_HEADER: &str = "epoch,seconds";

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-image loss over the epoch.
    pub train_loss: f64,
    /// NaN when there is no validation set.
    pub val_mae: f64,
    /// Wall-clock time of the epoch; written by [`timing_to_csv`], not [`log_to_csv`].
    pub seconds: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.epoch, self.train_loss, self.val_mae)
    }
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for row in log {
        let _ = writeln!(s, "{}", row.csv_row());
    }
    s
}

pub fn timing_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(TIMING_HEADER);
    s.push('\n');
    for row in log {
        let _ = writeln!(s, "{},{}", row.epoch, row.seconds);
    }
    s
}

/// Sidecar written next to every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: Option<f64>,
    pub train: TrainConfig,
    pub model: DroneNetConfig,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters after the last epoch.
    pub model: DroneNet<T>,
    /// Parameters of the epoch with the lowest validation MAE (training loss
    /// when there is no validation set).
    pub best: DroneNet<T>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub steps: u64,
}

/// Owns a model together with its optimizer state and the random stream used
/// for shuffling and augmentation.
pub struct Trainer<T> {
    model: DroneNet<T>,
    adam: AdamState<T>,
    config: TrainConfig,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: DroneNet<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.params(), config.adam);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            model,
            adam,
            config,
            rng,
        })
    }

    pub fn model(&self) -> &DroneNet<T> {
        &self.model
    }

    pub fn into_model(self) -> DroneNet<T> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn optimizer(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    /// Augmented input and its ground-truth map at output resolution.
    fn prepare(&mut self, sample: &Sample) -> Result<(Tensor<T>, Tensor<T>)> {
        let (image, points) = augment(
            &sample.image,
            &sample.points,
            &self.config.augment,
            &mut self.rng,
        );
        let s = image.shape();
        let full = density_map_from_points(&points, s.h, s.w, self.config.sigma)
            .map_err(|e| Error::invalid(format!("{}: {e}", sample.id)))?;
        Ok((image.cast(), downsample_gt(&full)?.to_tensor()))
    }

    /// Loss and parameter gradients for one image, without updating.
    pub fn sample_gradients(
        &self,
        x: &Tensor<T>,
        gt: &Tensor<T>,
        context: &str,
    ) -> Result<(f64, Gradients<T>)> {
        let (pred, cache) = self.model.forward_cached(x)?;
        let loss = mse_loss(&pred, gt)?;
        if !loss.value.is_finite() {
            return Err(Error::NonFinite {
                layer: cache
                    .first_non_finite()
                    .unwrap_or_else(|| "loss".to_string()),
                context: format!("{context}: loss is {}", loss.value),
            });
        }
        let grads = self.model.backward(&cache, &loss.grad)?;
        if let Some((name, _)) = grads
            .names
            .iter()
            .zip(&grads.tensors)
            .find(|(_, t)| !t.is_finite())
        {
            return Err(Error::NonFinite {
                layer: cache.first_non_finite().unwrap_or_else(|| name.clone()),
                context: format!("{context}: gradient of {name} is not finite"),
            });
        }
        Ok((loss.value, grads))
    }

    /// One Adam update on a batch. Returns the mean per-image loss.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut total: Option<Gradients<T>> = None;
        let mut loss_sum = 0.0;
        for sample in batch {
            let (x, gt) = self.prepare(sample)?;
            let context = format!("step {}, image {}", self.steps() + 1, sample.id);
            let (loss, grads) = self.sample_gradients(&x, &gt, &context)?;
            loss_sum += loss;
            match &mut total {
                Some(t) => t.add_assign(&grads)?,
                None => total = Some(grads),
            }
        }
        let mut grads = total.expect("non-empty batch");
        if batch.len() > 1 {
            grads.scale(T::from_f64(1.0 / batch.len() as f64));
        }
        let lr = self.config.learning_rate;
        self.adam
            .step(&mut self.model.params_mut(), &grads.tensors, lr)?;
        Ok(loss_sum / batch.len() as f64)
    }

    /// Shuffles `samples` and runs one pass of batched steps over them.
    /// Returns the mean per-image loss.
    pub fn run_epoch(&mut self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let mut order: Vec<&Sample> = samples.iter().collect();
        order.shuffle(&mut self.rng);
        let mut sum = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            sum += self.train_step(batch)? * batch.len() as f64;
        }
        Ok(sum / samples.len() as f64)
    }
}

/// Sum of the predicted density map, i.e. the estimated count.
pub fn predict_count<T: Scalar>(model: &DroneNet<T>, image: &Tensor<f32>) -> Result<f64> {
    Ok(model.forward(&image.cast())?.sum())
}

/// Mean absolute count error over `samples`; NaN for an empty set.
pub fn count_mae<T: Scalar>(model: &DroneNet<T>, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut sum = 0.0;
    for s in samples {
        sum += (predict_count(model, &s.image)? - s.count() as f64).abs();
    }
    Ok(sum / samples.len() as f64)
}

/// Splits `dataset` by the configured validation fraction and trains.
pub fn train<T: Scalar>(
    model: DroneNet<T>,
    dataset: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let (train_set, val_set) = split_dataset(dataset, config.val_fraction, config.seed)?;
    train_with(model, &train_set, &val_set, config, None, |_| {})
}

/// Full training loop on an explicit split. When `out_dir` is given it
/// receives `train_log.csv` and `epoch_times.csv` (both rewritten every
/// epoch), `best.sonn`,
/// `final.sonn`, periodic `epoch_NNNN.sonn` files and a JSON sidecar for
/// each model file.
pub fn train_with<T: Scalar>(
    model: DroneNet<T>,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut best = trainer.model().clone();
    let mut best_epoch = 0;
    let mut best_score = f64::INFINITY;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let train_loss = trainer.run_epoch(train_set)?;
        let val_mae = count_mae(trainer.model(), val_set)?;
        let row = EpochLog {
            epoch,
            train_loss,
            val_mae,
            seconds: start.elapsed().as_secs_f64(),
        };
        let score = if val_set.is_empty() {
            train_loss
        } else {
            val_mae
        };
        let improved = score < best_score || best_epoch == 0;
        if improved {
            best_score = score;
            best_epoch = epoch;
            best = trainer.model().clone();
        }
        if let Some(dir) = out_dir {
            let meta = meta_for(&row, config, trainer.model());
            if improved {
                save_checkpoint(trainer.model(), &meta, &dir.join("best.sonn"))?;
            }
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                save_checkpoint(
                    trainer.model(),
                    &meta,
                    &dir.join(format!("epoch_{epoch:04}.sonn")),
                )?;
            }
            if epoch == config.epochs {
                save_checkpoint(trainer.model(), &meta, &dir.join("final.sonn"))?;
            }
        }
        on_epoch(&row);
        log.push(row);
        if let Some(dir) = out_dir {
            write_file(&dir.join("train_log.csv"), log_to_csv(&log).into_bytes())?;
            write_file(
                &dir.join("epoch_times.csv"),
                timing_to_csv(&log).into_bytes(),
            )?;
        }
    }
    let steps = trainer.steps();
    Ok(TrainOutcome {
        model: trainer.into_model(),
        best,
        best_epoch,
        log,
        steps,
    })
}

fn meta_for<T: Scalar>(
    row: &EpochLog,
    config: &TrainConfig,
    model: &DroneNet<T>,
) -> CheckpointMeta {
    CheckpointMeta {
        epoch: row.epoch,
        train_loss: row.train_loss,
        val_mae: row.val_mae.is_finite().then_some(row.val_mae),
        train: config.clone(),
        model: model.config().clone(),
    }
}

/// Writes `path` plus `path` with a `.json` extension holding `meta`.
pub fn save_checkpoint<T: Scalar>(
    model: &DroneNet<T>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<()> {
    save_model(model, path)?;
    let json = serde_json::to_string_pretty(meta).expect("checkpoint metadata serializes");
    write_file(&path.with_extension("json"), json.into_bytes())
}

fn write_file(path: &Path, bytes: Vec<u8>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
