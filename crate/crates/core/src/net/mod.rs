//! The Self-ONN layer and the DroneNet graph built from it.

mod config;
mod init;
mod io;
mod layer;
mod macs;
mod model;

pub use config::{ColumnSpec, DroneNetConfig, LayerDesc, DOWNSAMPLE};
pub use init::{glorot_bound, init_for_training, init_weights, FUSION_BIAS_INIT};
pub use io::{
    load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION,
};
pub use layer::{SelfOnnGrads, SelfOnnLayer};
pub use macs::{count_macs, selfonn_layer_macs, LayerMacs, MacReport};
pub use model::{DroneNet, ForwardCache, Gradients};
