//! Loss, optimizer, augmentation, dataset split, the training loop and the
//! finite-difference gradient check.

mod adam;
mod augment;
mod config;
mod gradcheck;
mod loss;
mod split;
mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use augment::{augment, hflip_image, hflip_points, AugmentConfig};
pub use config::TrainConfig;
pub use gradcheck::{
    analytic_gradients, compare_gradients, gradcheck_fixture, gradcheck_suite, gradient_check,
    gradient_check_tampered, gradient_check_with, numeric_gradients, relative_error,
    GradCheckOptions, GradCheckReport, LayerCheck, TensorCheck,
};
pub use loss::{mse_loss, Loss};
pub use split::split_dataset;
pub use trainer::{
    count_mae, log_to_csv, predict_count, save_checkpoint, timing_to_csv, train, train_with,
    CheckpointMeta, EpochLog, TrainOutcome, Trainer, LOG_HEADER, TIMING_HEADER,
};
