use std::cmp::Ordering;

use prior3d_geometry::{bev_iou, centroid_distance_bev, Cuboid, ObjectClass};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub cuboid: Cuboid,
    pub score: f64,
}

/// Detections and ground truth of one frame. Matching never crosses frames.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameEval {
    pub detections: Vec<Detection>,
    pub gts: Vec<Cuboid>,
}

/// When a detection may claim a ground-truth box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "threshold", rename_all = "lowercase")]
pub enum Matcher {
    /// BEV IoU at least the threshold; the best candidate has the highest IoU.
    Iou(f64),
    /// BEV centre distance at most the threshold (m); the best candidate is the closest.
    Centroid(f64),
}

impl Matcher {
    /// Match quality (larger is better), or `None` when the pair fails the threshold.
    pub fn quality(self, det: &Cuboid, gt: &Cuboid) -> Option<f64> {
        match self {
            Matcher::Iou(t) => {
                let iou = bev_iou(det, gt);
                (iou >= t).then_some(iou)
            }
            Matcher::Centroid(t) => {
                let d = centroid_distance_bev(det, gt);
                (d <= t).then_some(-d)
            }
        }
    }

    pub fn label(self) -> String {
        match self {
            Matcher::Iou(t) => format!("iou@{t}"),
            Matcher::Centroid(t) => format!("centroid@{t}m"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Detections scoring at least this much produce the point.
    pub threshold: f64,
}

/// One point per distinct detection score, in descending score order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub points: Vec<PrPoint>,
}

impl PRCurve {
    /// Exact area under the step curve: Σ (r_k − r_{k−1}) · p_k with r_0 = 0.
    pub fn area(&self) -> f64 {
        let mut prev = 0.0;
        let mut area = 0.0;
        for p in &self.points {
            area += (p.recall - prev) * p.precision;
            prev = p.recall;
        }
        area
    }

    /// Keeps at most `n` points (first and last always kept); 0 keeps everything.
    pub fn thinned(&self, n: usize) -> PRCurve {
        let len = self.points.len();
        if n == 0 || len <= n {
            return self.clone();
        }
        let n = n.max(2);
        let points = (0..n).map(|i| self.points[i * (len - 1) / (n - 1)]).collect();
        PRCurve { points }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: ObjectClass,
    /// Absent when the class has no ground truth in range.
    pub ap: Option<f64>,
    pub num_gt: usize,
    pub num_detections: usize,
    pub curve: PRCurve,
}

pub fn in_range(cuboid: &Cuboid, max_range: f64) -> bool {
    let [x, y] = cuboid.bev_center();
    x.hypot(y) <= max_range
}

fn nearest_gt_distance(det: &Cuboid, gts: &[&Cuboid]) -> f64 {
    gts.iter().map(|g| centroid_distance_bev(det, g)).fold(f64::INFINITY, f64::min)
}

/// Ranking used for greedy matching: descending score, then lower distance to
/// the nearest ground truth of the frame, then frame and box parameters so the
/// order never depends on input order.
pub fn detection_order(a: (&Detection, usize, f64), b: (&Detection, usize, f64)) -> Ordering {
    let key = |d: &Detection| {
        let c = d.cuboid.center_array();
        let e = d.cuboid.extents();
        [c[0], c[1], c[2], e[0], e[1], e[2], d.cuboid.yaw()]
    };
    b.0.score
        .total_cmp(&a.0.score)
        .then(a.2.total_cmp(&b.2))
        .then(a.1.cmp(&b.1))
        .then_with(|| {
            key(a.0)
                .iter()
                .zip(key(b.0))
                .map(|(x, y)| x.total_cmp(&y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Average precision for one class: range filter, score-ordered greedy
/// matching with single use per ground truth, and all-point PR integration.
/// Detections with equal scores enter the curve together.
pub fn ap_class(frames: &[FrameEval], class: ObjectClass, matcher: Matcher, max_range: f64) -> ClassAp {
    let gts: Vec<Vec<&Cuboid>> = frames
        .iter()
        .map(|f| f.gts.iter().filter(|g| g.class() == class && in_range(g, max_range)).collect())
        .collect();
    let num_gt: usize = gts.iter().map(Vec::len).sum();

    let mut ranked: Vec<(&Detection, usize, f64)> = frames
        .iter()
        .enumerate()
        .flat_map(|(fi, f)| {
            let g = &gts[fi];
            f.detections
                .iter()
                .filter(|d| d.cuboid.class() == class && in_range(&d.cuboid, max_range))
                .map(move |d| (d, fi, nearest_gt_distance(&d.cuboid, g)))
        })
        .collect();
    ranked.sort_by(|a, b| detection_order(*a, *b));

    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &(det, fi, _)) in ranked.iter().enumerate() {
        let best = gts[fi]
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[fi][*j])
            .filter_map(|(j, g)| matcher.quality(&det.cuboid, g).map(|q| (j, q)))
            .fold(None, |acc: Option<(usize, f64)>, (j, q)| match acc {
                Some((_, bq)) if bq >= q => acc,
                _ => Some((j, q)),
            });
        match best {
            Some((j, _)) => {
                used[fi][j] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        let group_ends = ranked.get(k + 1).is_none_or(|next| next.0.score != det.score);
        if group_ends && num_gt > 0 {
            points.push(PrPoint {
                recall: tp as f64 / num_gt as f64,
                precision: tp as f64 / (tp + fp) as f64,
                threshold: det.score,
            });
        }
    }
    let curve = PRCurve { points };
    ClassAp {
        class,
        ap: (num_gt > 0).then(|| curve.area()),
        num_gt,
        num_detections: ranked.len(),
        curve,
    }
}

/// [`ap_class`] for every object class.
pub fn ap(frames: &[FrameEval], matcher: Matcher, max_range: f64) -> Vec<ClassAp> {
    ObjectClass::ALL.iter().map(|&c| ap_class(frames, c, matcher, max_range)).collect()
}
