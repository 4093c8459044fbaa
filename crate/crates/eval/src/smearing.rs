use prior3d_geometry::{Camera, Cuboid, Vec3};
use serde::{Deserialize, Serialize};

use crate::ap::{in_range, Detection};

pub struct SmearingFrame<'a> {
    pub detections: &'a [Detection],
    pub gts: &'a [Cuboid],
    pub cameras: &'a [Camera],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SmearingStats {
    /// Per in-range ground truth: confident detections inside its ray corridor.
    pub counts: Vec<usize>,
    /// Mean of `counts`; 0 without ground truth.
    pub mean: f64,
}

/// BEV origin of the ray towards `target`: the first camera that sees the
/// point, else the camera whose optical axis points closest to it.
fn ray_origin(cameras: &[Camera], target: &Vec3) -> Option<[f64; 2]> {
    let cam = cameras.iter().find(|c| c.project(target).valid).or_else(|| {
        cameras.iter().max_by(|a, b| {
            let cos = |c: &Camera| c.forward().dot(&(target - c.center()).normalize());
            cos(a).total_cmp(&cos(b))
        })
    })?;
    let c = cam.center();
    Some([c.x, c.y])
}

/// For each ground truth, counts detections scoring at least `tau` whose BEV
/// centre lies ahead of the camera within perpendicular distance `width` of
/// the camera-to-centroid BEV ray.
pub fn smearing_index(frames: &[SmearingFrame], tau: f64, width: f64, max_range: f64) -> SmearingStats {
    let mut counts = Vec::new();
    for f in frames {
        let confident: Vec<[f64; 2]> = f
            .detections
            .iter()
            .filter(|d| d.score >= tau && in_range(&d.cuboid, max_range))
            .map(|d| d.cuboid.bev_center())
            .collect();
        for g in f.gts.iter().filter(|g| in_range(g, max_range)) {
            let target = g.center();
            let Some(o) = ray_origin(f.cameras, &target) else {
                counts.push(0);
                continue;
            };
            let (dx, dy) = (target.x - o[0], target.y - o[1]);
            let len = dx.hypot(dy);
            if len == 0.0 {
                counts.push(0);
                continue;
            }
            let (ux, uy) = (dx / len, dy / len);
            let n = confident
                .iter()
                .filter(|p| {
                    let (vx, vy) = (p[0] - o[0], p[1] - o[1]);
                    let along = vx * ux + vy * uy;
                    along >= 0.0 && (vx * uy - vy * ux).abs() <= width
                })
                .count();
            counts.push(n);
        }
    }
    let mean = if counts.is_empty() { 0.0 } else { counts.iter().sum::<usize>() as f64 / counts.len() as f64 };
    SmearingStats { counts, mean }
}
