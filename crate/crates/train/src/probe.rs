use prior3d_detector::{Detector, FrameInput, Provenance};
use prior3d_geometry::Cuboid;
use serde::{Deserialize, Serialize};

use crate::hungarian::hungarian;
use crate::loss::{match_cost, DecodedBlock, LossConfig};
use crate::Result;

/// Labels one ground truth receives from the final block's assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtCensus {
    pub gt: usize,
    /// Queries labelled positive for this ground truth (at most one).
    pub matched: usize,
    pub query: Option<usize>,
    /// Queries sharing the matched query's ray, itself included.
    pub same_ray: usize,
    /// Of those, how many were labelled negative.
    pub same_ray_negative: usize,
    /// Negative queries whose reference point lies within `near_radius`.
    pub near_negative: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentCensus {
    pub queries: usize,
    pub positives: usize,
    pub negatives: usize,
    pub near_radius: f64,
    pub per_gt: Vec<GtCensus>,
}

/// Runs the model on one frame and reports how the set loss would label its
/// queries: one positive per ground truth and everything else, including the
/// other samples on the same ray, negative.
pub fn footnote_assignment_probe(
    model: &Detector,
    frame: &FrameInput,
    gts: &[Cuboid],
    cfg: &LossConfig,
    near_radius: f64,
) -> Result<AssignmentCensus> {
    let (tape, out) = model.run(frame)?;
    let last = out.blocks.last().expect("at least one block");
    let decoded = DecodedBlock::read(&tape, last);
    let matching = if gts.is_empty() { Default::default() } else { hungarian(&match_cost(&decoded, gts, cfg))? };
    let n = decoded.len();
    let mut positive = vec![false; n];
    for &(q, _) in &matching.pairs {
        positive[q] = true;
    }
    // vanilla plans carry no provenance
    let ray_of = |q: usize| match out.plan.provenance.get(q) {
        Some(Provenance::Ray { ray, .. }) => Some(*ray),
        _ => None,
    };
    let per_gt = gts
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let matched: Vec<usize> = matching.pairs.iter().filter(|p| p.1 == j).map(|p| p.0).collect();
            let query = matched.first().copied();
            let same: Vec<usize> = match query.and_then(ray_of) {
                Some(r) => (0..n).filter(|&q| ray_of(q) == Some(r)).collect(),
                None => query.into_iter().collect(),
            };
            let c = g.center_array();
            let near_negative = (0..n)
                .filter(|&q| !positive[q])
                .filter(|&q| {
                    let p = last.ref_points[q];
                    ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt() <= near_radius
                })
                .count();
            GtCensus {
                gt: j,
                matched: matched.len(),
                query,
                same_ray: same.len(),
                same_ray_negative: same.iter().filter(|&&q| !positive[q]).count(),
                near_negative,
            }
        })
        .collect();
    let positives = positive.iter().filter(|&&p| p).count();
    Ok(AssignmentCensus { queries: n, positives, negatives: n - positives, near_radius, per_gt })
}
