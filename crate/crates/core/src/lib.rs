//! DroneNet: crowd and vehicle density estimation with Self-ONN layers.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] holds the dense NCHW kernels and their backward passes.
//! * [`net`] builds the Self-ONN layer and the three-column DroneNet graph,
//!   with initialization, serialization and MAC accounting.
//! * [`groundtruth`] turns dot annotations into density maps and reads images.
//! * [`training`] has the loss, Adam, augmentation, splitting and the loop.
//! * [`metrics`] scores predictions (MAE, GAME, SSIM, PSNR) and times inference.

pub mod error;
pub mod groundtruth;
pub mod metrics;
pub mod net;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use groundtruth::{DensityMap, DotAnnotation, Point, Sample};
pub use metrics::{EvalReport, Footprint};
pub use net::{DroneNet, DroneNetConfig, SelfOnnLayer};
pub use tensor::{ConvAlgo, ConvSpec, Precision, Scalar, Shape, Tensor};
pub use training::{TrainConfig, TrainOutcome};
