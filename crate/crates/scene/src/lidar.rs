use prior3d_geometry::Vec3;
use serde::{Deserialize, Serialize};

use crate::config::LidarConfig;
use crate::scene::Scene;
use crate::SceneError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointSource {
    Ground,
    /// Index into the scene objects.
    Object(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LidarScan {
    /// World frame, meters.
    pub points: Vec<[f64; 3]>,
    pub sources: Vec<PointSource>,
}

impl LidarScan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rounds coordinates to f32 precision, the resolution they are stored at.
    pub fn quantized(mut self) -> Self {
        for p in &mut self.points {
            *p = p.map(|x| x as f32 as f64);
        }
        self
    }
}

/// Indices `⌊i·n/k⌋` for `k = round(n·rate)`: evenly spread over the scan order.
pub fn uniform_subsample_indices(n: usize, rate: f64) -> Vec<usize> {
    let k = ((n as f64 * rate).round() as usize).min(n);
    (0..k).map(|i| i * n / k).collect()
}

/// Casts one ray per (elevation, azimuth) cell from the lidar head, keeping
/// the first cuboid or ground hit within range, then subsamples the returns.
pub fn simulate_lidar(scene: &Scene, config: &LidarConfig) -> Result<LidarScan, SceneError> {
    config.validate()?;
    let origin = Vec3::new(0.0, 0.0, config.mount_height);
    let mut points = Vec::new();
    let mut sources = Vec::new();
    for b in 0..config.n_beams {
        let frac = if config.n_beams > 1 { b as f64 / (config.n_beams - 1) as f64 } else { 0.0 };
        let elev = (config.elevation_min_deg + frac * (config.elevation_max_deg - config.elevation_min_deg)).to_radians();
        for a in 0..config.azimuth_steps {
            let az = 2.0 * std::f64::consts::PI * a as f64 / config.azimuth_steps as f64;
            let dir = Vec3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin());
            let mut best: Option<(f64, PointSource)> = None;
            if dir.z < 0.0 {
                best = Some((-origin.z / dir.z, PointSource::Ground));
            }
            for (idx, obj) in scene.objects.iter().enumerate() {
                if let Some(hit) = obj.cuboid.intersect_ray(&origin, &dir) {
                    if best.is_none_or(|(t, _)| hit.t < t) {
                        best = Some((hit.t, PointSource::Object(idx)));
                    }
                }
            }
            let Some((t, src)) = best else { continue };
            if t > config.max_range {
                continue;
            }
            let mut p = origin + dir * t;
            if src == PointSource::Ground {
                p.z = 0.0;
            }
            points.push([p.x, p.y, p.z]);
            sources.push(src);
        }
    }
    let keep = uniform_subsample_indices(points.len(), config.subsample_rate);
    Ok(LidarScan {
        points: keep.iter().map(|&i| points[i]).collect(),
        sources: keep.iter().map(|&i| sources[i]).collect(),
    })
}
