use prior3d_detector::{yaw_to_pair, BlockOutput, REG_OUTPUTS};
use prior3d_geometry::{Cuboid, NUM_CLASSES};
use prior3d_tensor::{sigmoid_scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::hungarian::{hungarian, MatchResult};
use crate::{Result, TrainError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_cls: f64,
    pub lambda_box: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_cls: 2.0, lambda_box: 0.25, focal_alpha: 0.25, focal_gamma: 2.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_cls", self.lambda_cls), ("lambda_box", self.lambda_box), ("focal_gamma", self.focal_gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) {
            return Err(TrainError::Config(format!("focal_alpha must lie in [0, 1], got {}", self.focal_alpha)));
        }
        Ok(())
    }
}

/// Regression target of a ground-truth box: centre, extents, (sin 2ψ, cos 2ψ).
pub fn box_target(gt: &Cuboid) -> [f64; REG_OUTPUTS] {
    let c = gt.center_array();
    let e = gt.extents();
    let [s, co] = yaw_to_pair(gt.yaw());
    [c[0], c[1], c[2], e[0], e[1], e[2], s, co]
}

/// Per-query class probabilities and box parameters read off a block.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedBlock {
    pub probs: Vec<[f64; NUM_CLASSES]>,
    pub boxes: Vec<[f64; REG_OUTPUTS]>,
}

impl DecodedBlock {
    pub fn read(t: &Tape, block: &BlockOutput) -> Self {
        let logits = t.value(block.logits).data();
        let centers = t.value(block.centers).data();
        let extents = t.value(block.extents).data();
        let yaw = t.value(block.yaw).data();
        let n = block.ref_points.len();
        let probs = (0..n).map(|i| std::array::from_fn(|c| sigmoid_scalar(logits[i * NUM_CLASSES + c]))).collect();
        let boxes = (0..n)
            .map(|i| {
                let c = &centers[3 * i..3 * i + 3];
                let e = &extents[3 * i..3 * i + 3];
                [c[0], c[1], c[2], e[0], e[1], e[2], yaw[2 * i], yaw[2 * i + 1]]
            })
            .collect();
        Self { probs, boxes }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `cost[i][j] = λ_cls (1 − p_i(class_j)) + λ_box · L1(box_i, target_j)`.
pub fn match_cost(pred: &DecodedBlock, gts: &[Cuboid], cfg: &LossConfig) -> Vec<Vec<f64>> {
    let targets: Vec<_> = gts.iter().map(box_target).collect();
    (0..pred.len())
        .map(|i| {
            gts.iter()
                .zip(&targets)
                .map(|(g, t)| {
                    let l1: f64 = pred.boxes[i].iter().zip(t).map(|(a, b)| (a - b).abs()).sum();
                    cfg.lambda_cls * (1.0 - pred.probs[i][g.class().index()]) + cfg.lambda_box * l1
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockLoss {
    /// Focal loss normalised by max(#GT, 1), before λ_cls.
    pub cls: f64,
    /// L1 on matched queries normalised by max(#GT, 1), before λ_box.
    pub reg: f64,
    pub matching: MatchResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    /// Mean over blocks of λ_cls·cls + λ_box·reg.
    pub total: f64,
    /// Block means of the unweighted components.
    pub cls: f64,
    pub reg: f64,
    pub blocks: Vec<BlockLoss>,
}

/// Set-prediction loss with independent matching and equal weight for every
/// decoder block. Returns the differentiable total and its breakdown.
pub fn set_loss(t: &mut Tape, blocks: &[BlockOutput], gts: &[Cuboid], cfg: &LossConfig) -> Result<(Var, LossBreakdown)> {
    if blocks.is_empty() {
        return Err(TrainError::Config("no decoder outputs".into()));
    }
    let norm = gts.len().max(1) as f64;
    let mut terms = Vec::with_capacity(blocks.len());
    let mut parts = Vec::with_capacity(blocks.len());
    for block in blocks {
        let decoded = DecodedBlock::read(t, block);
        let n = decoded.len();
        let matching = if gts.is_empty() || n == 0 {
            MatchResult::default()
        } else {
            hungarian(&match_cost(&decoded, gts, cfg))?
        };

        let mut targets = vec![0.0; n * NUM_CLASSES];
        for &(q, g) in &matching.pairs {
            targets[q * NUM_CLASSES + gts[g].class().index()] = 1.0;
        }
        let focal = t.sigmoid_focal_loss(block.logits, &targets, cfg.focal_alpha, cfg.focal_gamma)?;
        let cls = t.scale(focal, 1.0 / norm);
        let mut block_total = t.scale(cls, cfg.lambda_cls);
        let mut reg_value = 0.0;
        if !matching.pairs.is_empty() {
            let rows: Vec<usize> = matching.pairs.iter().map(|p| p.0).collect();
            let c = t.gather_rows(block.centers, &rows)?;
            let e = t.gather_rows(block.extents, &rows)?;
            let y = t.gather_rows(block.yaw, &rows)?;
            let pred = t.concat(&[c, e, y], 1)?;
            let target: Vec<f64> = matching.pairs.iter().flat_map(|&(_, g)| box_target(&gts[g])).collect();
            let target = t.constant(Tensor::new([rows.len(), REG_OUTPUTS], target)?);
            let diff = t.sub(pred, target)?;
            let abs = t.abs(diff);
            let l1 = t.sum(abs);
            let reg = t.scale(l1, 1.0 / norm);
            reg_value = t.value(reg).item();
            let weighted = t.scale(reg, cfg.lambda_box);
            block_total = t.add(block_total, weighted)?;
        }
        parts.push(BlockLoss { cls: t.value(cls).item(), reg: reg_value, matching });
        terms.push(block_total);
    }
    let mut total = terms[0];
    for &x in &terms[1..] {
        total = t.add(total, x)?;
    }
    let total = t.scale(total, 1.0 / blocks.len() as f64);
    let k = parts.len() as f64;
    let breakdown = LossBreakdown {
        total: t.value(total).item(),
        cls: parts.iter().map(|p| p.cls).sum::<f64>() / k,
        reg: parts.iter().map(|p| p.reg).sum::<f64>() / k,
        blocks: parts,
    };
    Ok((total, breakdown))
}
