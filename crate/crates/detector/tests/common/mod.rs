#![allow(dead_code)]

use prior3d_geometry::{Box2D, Camera, ObjectClass, Vec3};
use prior3d_scene::SEMANTIC_CHANNELS;

/// Owned buffers for a synthetic frame.
pub struct Buffers {
    pub cameras: Vec<Camera>,
    pub images: Vec<Vec<f32>>,
    pub semantics: Vec<Vec<f32>>,
    pub depths: Vec<Vec<f32>>,
}

pub fn wave(i: usize, k: f64) -> f32 {
    (0.5 + 0.5 * ((i as f64) * k).sin()) as f32
}

impl Buffers {
    pub fn new(cameras: Vec<Camera>) -> Self {
        let (w, h) = (cameras[0].width(), cameras[0].height());
        let n = w * h;
        let images = (0..cameras.len()).map(|c| (0..3 * n).map(|i| wave(i + 7 * c, 0.37)).collect()).collect();
        let semantics = (0..cameras.len()).map(|c| (0..SEMANTIC_CHANNELS * n).map(|i| wave(i + 3 * c, 0.71)).collect()).collect();
        let depths = (0..cameras.len()).map(|c| (0..n).map(|i| wave(i + c, 0.13)).collect()).collect();
        Self { cameras, images, semantics, depths }
    }

    pub fn frame(&self, boxes: Vec<Vec<Box2D>>, lidar: Vec<[f64; 3]>) -> prior3d_detector::FrameInput<'_> {
        prior3d_detector::FrameInput {
            views: self
                .cameras
                .iter()
                .enumerate()
                .map(|(i, camera)| prior3d_detector::ViewInput {
                    camera,
                    image: &self.images[i],
                    semantic: &self.semantics[i],
                    depth: &self.depths[i],
                    boxes: boxes.get(i).cloned().unwrap_or_default(),
                })
                .collect(),
            lidar,
        }
    }
}

pub fn camera_at(x: f64, yaw: f64, size: (usize, usize)) -> Camera {
    Camera::mounted(Vec3::new(x, 0.0, 1.0), yaw, 90.0, size).unwrap()
}

pub fn centre_box(cam: &Camera, score: f64) -> Box2D {
    Box2D::new([cam.cx(), cam.cy()], [cam.width() as f64 / 4.0, cam.height() as f64 / 4.0], ObjectClass::Vehicle, score).unwrap()
}
