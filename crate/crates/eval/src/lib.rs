//! Bird's-eye-view detection metrics over the 50 m evaluation range.

mod ap;
mod nms;
mod refpoints;
mod report;
mod smearing;

pub use ap::{ap, ap_class, detection_order, in_range, ClassAp, Detection, FrameEval, Matcher, PRCurve, PrPoint};
pub use nms::bev_nms;
pub use refpoints::{refpoint_recall, RefPointStats};
pub use report::{
    detections_from_predictions, evaluate_frames, evaluate_run, load_report, write_report, ClassReport, EvalConfig,
    EvalReport, FrameResult, RefPointSummary, SmearingSummary, PR_CSV_HEADER,
};
pub use smearing::{smearing_index, SmearingFrame, SmearingStats};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("model and dataset disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Detector(#[from] prior3d_detector::DetectorError),
    #[error(transparent)]
    Scene(#[from] prior3d_scene::SceneError),
    #[error("i/o at {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
