//! Camera and cuboid geometry shared by the simulator, detector and metrics.
//!
//! World frame: right-handed, z up, meters, yaw measured about +z.
//! Camera frame: x right, y down, z forward (optical axis).

mod camera;
mod cuboid;
mod polygon;

pub use camera::{sample_camera_ray, sample_ray, Camera, DepthMode, Projection, Ray, RaySampling};
pub use cuboid::{
    centroid_distance_bev, normalize_yaw, project_cuboid_to_box2d, Box2D, Cuboid, ObjectClass, RayHit,
    NUM_CLASSES,
};
pub use polygon::{bev_iou, clip_convex, polygon_area, signed_area, Point2};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("invalid cuboid: {0}")]
    Cuboid(String),
    #[error("invalid box: {0}")]
    Box2D(String),
    #[error("invalid ray: {0}")]
    Ray(String),
}

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
