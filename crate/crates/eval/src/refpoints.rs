use prior3d_geometry::Cuboid;
use serde::{Deserialize, Serialize};

use crate::ap::in_range;

/// Distance from every in-range ground-truth centroid to its nearest
/// reference point.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefPointStats {
    /// Meters; infinite when the frame had no reference points at all.
    pub distances: Vec<f64>,
    /// Frames with ground truth but an empty query set.
    pub empty_query_frames: usize,
}

impl RefPointStats {
    /// Fraction of ground truth with a reference point within `radius`.
    /// Zero when there is no ground truth.
    pub fn recall(&self, radius: f64) -> f64 {
        if self.distances.is_empty() {
            return 0.0;
        }
        self.distances.iter().filter(|&&d| d <= radius).count() as f64 / self.distances.len() as f64
    }

    pub fn mean_distance(&self) -> Option<f64> {
        let finite: Vec<f64> = self.distances.iter().copied().filter(|d| d.is_finite()).collect();
        (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64)
    }
}

/// `frames` pairs each frame's reference points with its ground truth.
pub fn refpoint_recall(frames: &[(Vec<[f64; 3]>, Vec<Cuboid>)], max_range: f64) -> RefPointStats {
    let mut stats = RefPointStats::default();
    for (refs, gts) in frames {
        let gts: Vec<&Cuboid> = gts.iter().filter(|g| in_range(g, max_range)).collect();
        if refs.is_empty() && !gts.is_empty() {
            stats.empty_query_frames += 1;
        }
        for g in gts {
            let c = g.center_array();
            let d = refs
                .iter()
                .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            stats.distances.push(d);
        }
    }
    stats
}
