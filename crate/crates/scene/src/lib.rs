//! Procedural multi-camera world: cuboid objects around a camera rig, toy
//! renderings with ground-truth and degraded 2D priors, simulated lidar, and
//! the on-disk dataset format.

mod config;
mod dataset;
mod lidar;
mod noise;
mod render;
mod scene;

use std::path::PathBuf;

pub use config::{ClassLayout, LidarConfig, PriorNoiseConfig, Range, RigConfig, SceneConfig};
pub use dataset::{
    build_record, generate_dataset, read_dataset, read_scene, scene_id, scene_seed, view_seed, write_dataset,
    write_scene, Dataset, DatasetMeta, GenerationConfig, SceneRecord, Splits, ViewRecord, DATASET_FILE,
    DATASET_FORMAT, SCENE_MANIFEST, SPLITS_FILE,
};
pub use lidar::{simulate_lidar, uniform_subsample_indices, LidarScan, PointSource};
pub use noise::corrupt_priors;
pub use render::{
    render_view, LabeledBox, RenderedView, BACKGROUND_CHANNEL, DEPTH_MAX, SEMANTIC_CHANNELS, SEMANTIC_NAMES,
};
pub use scene::{build_rig, generate_scene, Scene, SceneObject};

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt dataset: {0}")]
    Corrupt(String),
}
