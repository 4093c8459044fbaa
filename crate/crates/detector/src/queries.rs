use prior3d_geometry::{sample_camera_ray, Box2D, NUM_CLASSES};
use prior3d_scene::{uniform_subsample_indices, SEMANTIC_CHANNELS};
use prior3d_tensor::{Region, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneFeatures, LevelMap};
use crate::config::{DecoderConfig, LocSource};
use crate::input::{FrameInput, ViewInput};
use crate::DetectorError;

/// Where a query came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Vanilla(usize),
    /// `ray` indexes [`QueryPlan::rays`]; `depth_index` counts samples from the camera.
    Ray { ray: usize, depth_index: usize },
    Lidar(usize),
}

/// A kept 2D box that spawned a ray of queries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySource {
    pub camera: usize,
    pub box_index: usize,
    pub bbox: Box2D,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryKind {
    Vanilla,
    Ray,
    Lidar,
}

/// Non-differentiable description of a frame's queries. Vanilla plans carry
/// no points: their reference points come out of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryPlan {
    pub kind: QueryKind,
    pub ref_points: Vec<[f64; 3]>,
    pub provenance: Vec<Provenance>,
    pub rays: Vec<RaySource>,
    /// Set when prior-based generation produced nothing and vanilla queries
    /// were substituted.
    pub fallback: bool,
}

impl QueryPlan {
    pub fn vanilla(n: usize) -> Self {
        Self {
            kind: QueryKind::Vanilla,
            ref_points: Vec::new(),
            provenance: (0..n).map(Provenance::Vanilla).collect(),
            rays: Vec::new(),
            fallback: false,
        }
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }
}

/// Rays through the centres of boxes scoring at least the threshold, sampled
/// at fixed spacing. When the budget is exceeded whole rays are dropped,
/// lowest box score first. The result may be empty.
pub fn ray_query_plan(frame: &FrameInput, config: &DecoderConfig) -> Result<QueryPlan, DetectorError> {
    let mut kept: Vec<RaySource> = Vec::new();
    for (camera, view) in frame.views.iter().enumerate() {
        for (box_index, bbox) in view.boxes.iter().enumerate() {
            if bbox.score() >= config.box_score_threshold {
                kept.push(RaySource { camera, box_index, bbox: *bbox });
            }
        }
    }
    // stable sort keeps camera/box order among equal scores
    kept.sort_by(|a, b| b.bbox.score().total_cmp(&a.bbox.score()));

    let mut plan = QueryPlan {
        kind: QueryKind::Ray,
        ref_points: Vec::new(),
        provenance: Vec::new(),
        rays: Vec::new(),
        fallback: false,
    };
    for src in kept {
        let [u, v] = src.bbox.center();
        let samples = sample_camera_ray(frame.views[src.camera].camera, u, v, &config.ray_sampling)
            .map_err(|e| DetectorError::Config(e.to_string()))?;
        if samples.is_empty() {
            continue;
        }
        if plan.ref_points.len() + samples.len() > config.query_budget {
            break;
        }
        let ray = plan.rays.len();
        plan.rays.push(src);
        for (depth_index, p) in samples.iter().enumerate() {
            plan.ref_points.push([p.x, p.y, p.z]);
            plan.provenance.push(Provenance::Ray { ray, depth_index });
        }
    }
    Ok(plan)
}

/// Each lidar point becomes a reference point, thinned evenly to the budget.
pub fn lidar_query_plan(points: &[[f64; 3]], config: &DecoderConfig) -> QueryPlan {
    let keep: Vec<usize> = if points.len() > config.query_budget {
        uniform_subsample_indices(points.len(), config.query_budget as f64 / points.len() as f64)
    } else {
        (0..points.len()).collect()
    };
    QueryPlan {
        kind: QueryKind::Lidar,
        ref_points: keep.iter().map(|&i| points[i]).collect(),
        provenance: keep.iter().map(|&i| Provenance::Lidar(i)).collect(),
        rays: Vec::new(),
        fallback: false,
    }
}

/// Picks the generator for the configured priors, falling back to vanilla
/// queries when the prior-based set is empty.
pub fn plan_queries(frame: &FrameInput, config: &DecoderConfig) -> Result<QueryPlan, DetectorError> {
    if !config.priors.loc {
        return Ok(QueryPlan::vanilla(config.vanilla_queries));
    }
    let plan = match config.priors.loc_source {
        LocSource::Ray => ray_query_plan(frame, config)?,
        LocSource::Lidar => lidar_query_plan(&frame.lidar, config),
    };
    if plan.is_empty() {
        return Ok(QueryPlan { fallback: true, ..QueryPlan::vanilla(config.vanilla_queries) });
    }
    Ok(plan)
}

/// Sinusoidal encoding of reference points: the normalised coordinates
/// followed by sin/cos at `frequencies` octaves, one row per point.
pub fn encode_positions(points: &[[f64; 3]], frequencies: usize) -> Tensor {
    const SCALE: [f64; 3] = [50.0, 50.0, 5.0];
    let width = 3 + 6 * frequencies;
    let mut data = Vec::with_capacity(points.len() * width);
    for p in points {
        let n: Vec<f64> = (0..3).map(|a| p[a] / SCALE[a]).collect();
        data.extend_from_slice(&n);
        for k in 0..frequencies {
            let f = std::f64::consts::PI * (1 << k) as f64;
            for x in &n {
                data.push((f * x).sin());
                data.push((f * x).cos());
            }
        }
    }
    Tensor::new([points.len(), width], data).expect("row width matches")
}

pub fn position_encoding_width(frequencies: usize) -> usize {
    3 + 6 * frequencies
}

/// Length of the vector [`pooled_box_vector`] returns for `channels` feature
/// channels per level.
pub fn pooled_vector_len(channels: usize, levels: usize) -> usize {
    1 + levels * channels + NUM_CLASSES + 1 + 4
}

/// Window covering `[lo, hi)` pixels at `stride`; a sub-pixel window becomes
/// the single pixel nearest its centre.
fn window(lo: f64, hi: f64, stride: usize, limit: usize) -> (usize, usize) {
    let s = stride as f64;
    let a = ((lo / s).floor().max(0.0) as usize).min(limit);
    let b = ((hi / s).ceil().max(0.0) as usize).min(limit);
    if b > a {
        return (a, b);
    }
    let c = ((0.5 * (lo + hi) / s).floor().max(0.0) as usize).min(limit - 1);
    (c, c + 1)
}

fn crop_region(bbox: &Box2D, stride: usize, width: usize, height: usize) -> Region {
    let [x0, y0, x1, y1] = bbox.corners();
    let (rx0, rx1) = window(x0, x1, stride, width);
    let (ry0, ry1) = window(y0, y1, stride, height);
    Region { y0: ry0, y1: ry1, x0: rx0, x1: rx1 }
}

/// Per-pixel semantic weights of `class` over `region` of an interleaved
/// map with `channels` channels per pixel.
fn crop_channel<T: Copy + Into<f64>>(map: &[T], width: usize, channels: usize, channel: usize, region: Region) -> Vec<f64> {
    let mut w = Vec::with_capacity(region.area());
    for y in region.y0..region.y1 {
        for x in region.x0..region.x1 {
            w.push(map[(y * width + x) * channels + channel].into());
        }
    }
    w
}

/// Box crop pooling for one box: crop the depth map and every feature level
/// to the box, weight each crop pixel by the semantic score of the box's
/// class, average-pool per channel, and append one-hot class, score and the
/// normalised (u, v, w, h).
pub fn pooled_box_vector(
    t: &mut Tape,
    bbox: &Box2D,
    view: &ViewInput,
    levels: &[LevelMap],
    pooled_priors: &[Vec<f64>],
) -> Result<Var, DetectorError> {
    let (w, h) = (view.width(), view.height());
    let class = bbox.class();

    let region = crop_region(bbox, 1, w, h);
    let weights = crop_channel(view.semantic, w, SEMANTIC_CHANNELS, class.index(), region);
    let (ch, cw) = (region.y1 - region.y0, region.x1 - region.x0);
    let depth_crop = t.constant(Tensor::new([ch, cw, 1], crop_channel(view.depth, w, 1, 0, region))?);
    let whole = Region { y0: 0, y1: ch, x0: 0, x1: cw };
    let mut parts = vec![t.region_pool(depth_crop, whole, Some(weights))?];

    for (level, pooled) in levels.iter().zip(pooled_priors) {
        let region = crop_region(bbox, level.stride, level.width, level.height);
        let weights = crop_channel(pooled, level.width, SEMANTIC_CHANNELS + 1, class.index(), region);
        parts.push(t.region_pool(level.map, region, Some(weights))?);
    }

    let mut meta = vec![0.0; NUM_CLASSES];
    meta[class.index()] = 1.0;
    let [u, v] = bbox.center();
    meta.extend_from_slice(&[bbox.score(), u / w as f64, v / h as f64, bbox.width() / w as f64, bbox.height() / h as f64]);
    parts.push(t.constant(Tensor::vector(meta)));
    Ok(t.concat(&parts, 0)?)
}

/// Pooled vectors for every ray of a plan, stacked as rows.
pub fn pooled_ray_vectors(
    t: &mut Tape,
    plan: &QueryPlan,
    frame: &FrameInput,
    features: &BackboneFeatures,
) -> Result<Var, DetectorError> {
    let mut rows = Vec::with_capacity(plan.rays.len());
    for src in &plan.rays {
        let v = pooled_box_vector(
            t,
            &src.bbox,
            &frame.views[src.camera],
            &features.levels[src.camera],
            &features.pooled_priors[src.camera],
        )?;
        let n = t.shape(v)[0];
        rows.push(t.reshape(v, &[1, n])?);
    }
    Ok(t.concat(&rows, 0)?)
}
