use prior3d_geometry::{project_cuboid_to_box2d, Box2D, Camera, ObjectClass, Vec3};
use serde::{Deserialize, Serialize};

use crate::scene::Scene;

/// Semantic channels: one per object class followed by background.
pub const SEMANTIC_CHANNELS: usize = 3;
pub const BACKGROUND_CHANNEL: usize = 2;
pub const SEMANTIC_NAMES: [&str; SEMANTIC_CHANNELS] = ["VEHICLE", "HUMAN", "BACKGROUND"];
/// Metric depth that maps to 1.0.
pub const DEPTH_MAX: f64 = 50.0;

const LIGHT: [f64; 3] = [0.267, 0.445, 0.855];
const SKY: [f64; 3] = [0.55, 0.7, 0.92];
const GROUND: [f64; 3] = [0.42, 0.4, 0.37];

/// A 2D box with the index of the scene object it came from, or `None` for
/// injected false positives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub bbox: Box2D,
    pub source: Option<usize>,
}

/// Row-major maps: `image` is H×W×3, `semantic` H×W×C, `depth` H×W.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub width: usize,
    pub height: usize,
    pub image: Vec<f32>,
    pub semantic: Vec<f32>,
    pub depth: Vec<f32>,
    pub boxes: Vec<LabeledBox>,
}

impl RenderedView {
    pub fn depth_at(&self, u: usize, v: usize) -> f32 {
        self.depth[v * self.width + u]
    }

    pub fn semantic_at(&self, u: usize, v: usize, channel: usize) -> f32 {
        self.semantic[(v * self.width + u) * SEMANTIC_CHANNELS + channel]
    }
}

fn background_colour(dir: &Vec3, origin: &Vec3) -> [f64; 3] {
    if dir.z < -1e-9 {
        let t = -origin.z / dir.z;
        let (gx, gy) = (origin.x + t * dir.x, origin.y + t * dir.y);
        // 4 m checkerboard fading with distance
        let checker = if ((gx / 4.0).floor() + (gy / 4.0).floor()) as i64 % 2 == 0 { 1.0 } else { 0.88 };
        let fade = 0.75 + 0.25 * (-t / 30.0).exp();
        GROUND.map(|c| c * checker * fade)
    } else {
        let lift = dir.z.clamp(0.0, 1.0);
        SKY.map(|c| c * (0.85 + 0.15 * lift))
    }
}

/// Ray-casts every pixel centre against the scene cuboids with a depth
/// buffer. Only pixels inside an object's projected box are tested against
/// that object.
pub fn render_view(scene: &Scene, camera: &Camera) -> RenderedView {
    let (w, h) = (camera.width(), camera.height());
    let origin = camera.center();
    let dirs: Vec<Vec3> = (0..h)
        .flat_map(|v| (0..w).map(move |u| (u, v)))
        .map(|(u, v)| camera.unproject(u as f64 + 0.5, v as f64 + 0.5).direction())
        .collect();

    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut owner: Vec<Option<(usize, Vec3)>> = vec![None; w * h];
    let mut boxes = Vec::new();
    for (idx, obj) in scene.objects.iter().enumerate() {
        let Some(bbox) = project_cuboid_to_box2d(camera, &obj.cuboid) else { continue };
        boxes.push(LabeledBox { bbox, source: Some(idx) });
        let [x0, y0, x1, y1] = bbox.corners();
        let (u0, u1) = (x0.floor() as usize, (x1.ceil() as usize).min(w));
        let (v0, v1) = (y0.floor() as usize, (y1.ceil() as usize).min(h));
        for v in v0..v1 {
            for u in u0..u1 {
                let p = v * w + u;
                let Some(hit) = obj.cuboid.intersect_ray(&origin, &dirs[p]) else { continue };
                let z = camera.world_to_camera(&(origin + dirs[p] * hit.t)).z;
                if z < zbuf[p] {
                    zbuf[p] = z;
                    owner[p] = Some((idx, hit.normal));
                }
            }
        }
    }

    let mut image = vec![0f32; w * h * 3];
    let mut semantic = vec![0f32; w * h * SEMANTIC_CHANNELS];
    let mut depth = vec![1f32; w * h];
    for p in 0..w * h {
        let colour = match owner[p] {
            Some((idx, normal)) => {
                let obj = &scene.objects[idx];
                let lambert = (normal.x * LIGHT[0] + normal.y * LIGHT[1] + normal.z * LIGHT[2]).max(0.0);
                let class: ObjectClass = obj.cuboid.class();
                semantic[p * SEMANTIC_CHANNELS + class.index()] = 1.0;
                depth[p] = (zbuf[p] / DEPTH_MAX).clamp(0.0, 1.0) as f32;
                obj.albedo.map(|a| a * (0.35 + 0.65 * lambert))
            }
            None => {
                semantic[p * SEMANTIC_CHANNELS + BACKGROUND_CHANNEL] = 1.0;
                background_colour(&dirs[p], &origin)
            }
        };
        for c in 0..3 {
            image[p * 3 + c] = colour[c] as f32;
        }
    }

    RenderedView { width: w, height: h, image, semantic, depth, boxes }
}
