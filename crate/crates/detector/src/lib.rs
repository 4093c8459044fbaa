//! Query-based multi-camera 3D detector. A patch-embedding backbone feeds a
//! stack of decoder blocks (self-attention, local cross-attention at
//! projected reference points, feed-forward) with a shared box head.
//! Queries are either learned (vanilla), cast along rays through 2D box
//! centres, or placed at lidar returns; semantic and depth maps can join the
//! backbone and box crops can seed query features.

mod backbone;
mod config;
mod decoder;
mod input;
mod layers;
mod model;
mod queries;

pub use backbone::{Backbone, BackboneFeatures, LevelMap, STRIDES};
pub use config::{DecoderConfig, LocSource, PriorFlags};
pub use decoder::{BlockOutput, CrossAttention, CrossAttentionOutput, Head, REG_OUTPUTS};
pub use input::{pinhole_params, FrameInput, ViewInput};
pub use layers::{LayerNorm, Linear, Mlp, ParamVars};
pub use model::{
    decode_block, yaw_from_pair, yaw_to_pair, Detector, ForwardOutput, ModelSpec, Prediction, SCENE_MAX, SCENE_MIN,
};
pub use queries::{
    encode_positions, lidar_query_plan, plan_queries, pooled_box_vector, pooled_ray_vectors, pooled_vector_len,
    position_encoding_width, ray_query_plan, Provenance, QueryKind, QueryPlan, RaySource,
};

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error("invalid detector input: {0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] prior3d_tensor::TensorError),
    #[error(transparent)]
    Checkpoint(#[from] prior3d_tensor::checkpoint::CheckpointError),
}
