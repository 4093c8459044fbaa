//! Dense `f64` tensors with tape-based reverse-mode differentiation, the
//! operator set used by the detector, AdamW with cosine decay, and a flat
//! checkpoint format.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use optim::{cosine_lr, AdamW, AdamWConfig, DEFAULT_LR, DEFAULT_WEIGHT_DECAY};
pub use params::{ParamId, ParamStore};
pub use tape::{
    sigmoid_scalar, softplus_scalar, Gradients, PinholeParams, Region, Tape, Var,
    BEHIND_CAMERA_UV, MIN_PROJECTION_DEPTH,
};
pub use tensor::Tensor;
