//! Set-prediction training: Hungarian matching, focal + L1 loss with deep
//! supervision, and an AdamW loop with cosine decay.

mod hungarian;
mod loss;
mod probe;
mod train;

pub use hungarian::{hungarian, MatchResult};
pub use loss::{box_target, match_cost, set_loss, BlockLoss, DecodedBlock, LossBreakdown, LossConfig};
pub use probe::{footnote_assignment_probe, AssignmentCensus, GtCensus};
pub use train::{
    train, DatasetSplit, EpochRecord, FrameSource, LearningCurve, TrainConfig, TrainOptions, TrainOutcome,
    CURVE_CSV_HEADER,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("assignment failed: {0}")]
    Assignment(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Tensor(#[from] prior3d_tensor::TensorError),
    #[error(transparent)]
    Detector(#[from] prior3d_detector::DetectorError),
    #[error(transparent)]
    Scene(#[from] prior3d_scene::SceneError),
    #[error(transparent)]
    Eval(#[from] prior3d_eval::EvalError),
    #[error("i/o at {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
