use prior3d_geometry::bev_iou;

use crate::ap::Detection;

/// Greedy per-class BEV non-maximum suppression: a detection is dropped when
/// it overlaps an already kept, higher-scoring one of the same class by more
/// than `iou_threshold`. Output keeps descending score order.
pub fn bev_nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = detections.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in order {
        let suppressed = kept
            .iter()
            .any(|k| k.cuboid.class() == d.cuboid.class() && bev_iou(&k.cuboid, &d.cuboid) > iou_threshold);
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}
