use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use prior3d_detector::{decode_block, Detector, FrameInput, Prediction};
use prior3d_geometry::{Camera, Cuboid, ObjectClass};
use prior3d_scene::SceneRecord;
use serde::{Deserialize, Serialize};

use crate::ap::{ap_class, Detection, FrameEval, Matcher, PRCurve};
use crate::nms::bev_nms;
use crate::refpoints::refpoint_recall;
use crate::smearing::{smearing_index, SmearingFrame};
use crate::{EvalError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Meters, BEV centre distance.
    pub centroid_threshold: f64,
    pub max_range: f64,
    /// Points kept per exported PR curve; 0 keeps every distinct score.
    pub pr_points: usize,
    pub refpoint_radius: f64,
    pub smearing_tau: f64,
    pub smearing_width: f64,
    /// BEV NMS IoU threshold; `None` evaluates raw predictions.
    pub nms: Option<f64>,
    /// Queries whose best class probability is below this are not emitted.
    pub min_score: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.1,
            centroid_threshold: 4.0,
            max_range: 50.0,
            pr_points: 200,
            refpoint_radius: 2.5,
            smearing_tau: 0.3,
            smearing_width: 2.0,
            nms: None,
            min_score: 0.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("iou_threshold", self.iou_threshold),
            ("centroid_threshold", self.centroid_threshold),
            ("max_range", self.max_range),
            ("refpoint_radius", self.refpoint_radius),
            ("smearing_width", self.smearing_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EvalError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.smearing_tau > 0.0 && self.smearing_tau < 1.0) {
            return Err(EvalError::Config(format!("smearing_tau must lie in (0, 1), got {}", self.smearing_tau)));
        }
        if let Some(t) = self.nms {
            if !(0.0..=1.0).contains(&t) {
                return Err(EvalError::Config(format!("nms threshold must lie in [0, 1], got {t}")));
            }
        }
        if !(0.0..1.0).contains(&self.min_score) {
            return Err(EvalError::Config(format!("min_score must lie in [0, 1), got {}", self.min_score)));
        }
        Ok(())
    }

    pub fn iou_matcher(&self) -> Matcher {
        Matcher::Iou(self.iou_threshold)
    }

    pub fn centroid_matcher(&self) -> Matcher {
        Matcher::Centroid(self.centroid_threshold)
    }

    pub fn mode(&self) -> String {
        match self.nms {
            None => "raw".into(),
            Some(t) => format!("nms@{t}"),
        }
    }
}

/// One query → at most one detection, labelled with its most probable class.
pub fn detections_from_predictions(preds: &[Prediction], min_score: f64) -> Vec<Detection> {
    preds
        .iter()
        .filter_map(|p| {
            let (class, score) = p.best_class();
            if score < min_score || !score.is_finite() {
                return None;
            }
            let cuboid = Cuboid::new(p.center, p.extents, p.yaw, class).ok()?;
            Some(Detection { cuboid, score })
        })
        .collect()
}

/// Everything the metrics need from one evaluated frame.
#[derive(Clone, Debug)]
pub struct FrameResult {
    pub detections: Vec<Detection>,
    pub gts: Vec<Cuboid>,
    /// Reference points the queries started from.
    pub ref_points: Vec<[f64; 3]>,
    pub cameras: Vec<Camera>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: ObjectClass,
    pub num_gt: usize,
    pub num_detections: usize,
    pub ap_iou: Option<f64>,
    pub ap_centroid: Option<f64>,
    /// AP at the centroid threshold is not below AP at the IoU threshold.
    /// Monitored per run, not guaranteed.
    pub centroid_ge_iou: Option<bool>,
    pub pr_iou: PRCurve,
    pub pr_centroid: PRCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefPointSummary {
    pub radius: f64,
    pub recall: f64,
    pub mean_distance: Option<f64>,
    pub num_gt: usize,
    pub empty_query_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmearingSummary {
    pub tau: f64,
    pub width: f64,
    pub index: f64,
    pub num_gt: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Free-form run label, normally the prior variant.
    pub model: String,
    pub priors: String,
    pub split: String,
    pub frames: usize,
    /// "raw" or "nms@<iou>".
    pub mode: String,
    pub config: EvalConfig,
    pub classes: Vec<ClassReport>,
    pub refpoints: RefPointSummary,
    pub smearing: SmearingSummary,
}

impl EvalReport {
    pub fn class(&self, class: ObjectClass) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.class == class)
    }
}

/// Computes the metrics of already evaluated frames.
pub fn evaluate_frames(frames: &[FrameResult], config: &EvalConfig) -> Result<(Vec<ClassReport>, RefPointSummary, SmearingSummary)> {
    config.validate()?;
    let evals: Vec<FrameEval> = frames
        .iter()
        .map(|f| FrameEval {
            detections: match config.nms {
                Some(t) => bev_nms(&f.detections, t),
                None => f.detections.clone(),
            },
            gts: f.gts.clone(),
        })
        .collect();

    let classes = ObjectClass::ALL
        .iter()
        .map(|&class| {
            let iou = ap_class(&evals, class, config.iou_matcher(), config.max_range);
            let cen = ap_class(&evals, class, config.centroid_matcher(), config.max_range);
            ClassReport {
                class,
                num_gt: iou.num_gt,
                num_detections: iou.num_detections,
                ap_iou: iou.ap,
                ap_centroid: cen.ap,
                centroid_ge_iou: iou.ap.zip(cen.ap).map(|(a, b)| b >= a),
                pr_iou: iou.curve.thinned(config.pr_points),
                pr_centroid: cen.curve.thinned(config.pr_points),
            }
        })
        .collect();

    let pairs: Vec<(Vec<[f64; 3]>, Vec<Cuboid>)> = frames.iter().map(|f| (f.ref_points.clone(), f.gts.clone())).collect();
    let rp = refpoint_recall(&pairs, config.max_range);
    let refpoints = RefPointSummary {
        radius: config.refpoint_radius,
        recall: rp.recall(config.refpoint_radius),
        mean_distance: rp.mean_distance(),
        num_gt: rp.distances.len(),
        empty_query_frames: rp.empty_query_frames,
    };

    let smear_frames: Vec<SmearingFrame> = evals
        .iter()
        .zip(frames)
        .map(|(e, f)| SmearingFrame { detections: &e.detections, gts: &f.gts, cameras: &f.cameras })
        .collect();
    let sm = smearing_index(&smear_frames, config.smearing_tau, config.smearing_width, config.max_range);
    let smearing = SmearingSummary {
        tau: config.smearing_tau,
        width: config.smearing_width,
        index: sm.mean,
        num_gt: sm.counts.len(),
    };
    Ok((classes, refpoints, smearing))
}

fn check_compatible(model: &Detector, record: &SceneRecord) -> Result<()> {
    let cams = model.spec.num_cameras;
    if record.views.len() != cams {
        return Err(EvalError::Mismatch(format!(
            "model expects {cams} cameras, scene `{}` has {}",
            record.id,
            record.views.len()
        )));
    }
    Ok(())
}

fn run_frame(model: &Detector, record: &SceneRecord, config: &EvalConfig) -> Result<FrameResult> {
    check_compatible(model, record)?;
    let frame = FrameInput::from_record(record);
    let (tape, out) = model.run(&frame)?;
    let preds = decode_block(&tape, out.blocks.last().expect("at least one block"), &out.plan);
    Ok(FrameResult {
        detections: detections_from_predictions(&preds, config.min_score),
        gts: record.scene.cuboids().copied().collect(),
        ref_points: out.plan.ref_points.clone(),
        cameras: record.scene.cameras.clone(),
    })
}

/// Runs inference over `records` on up to `jobs` threads and computes every
/// metric. Results do not depend on `jobs`.
pub fn evaluate_run(
    model: &Detector,
    records: &[SceneRecord],
    split: &str,
    config: &EvalConfig,
    jobs: usize,
) -> Result<EvalReport> {
    config.validate()?;
    let jobs = jobs.clamp(1, records.len().max(1));
    let chunk = records.len().div_ceil(jobs).max(1);
    let results: Vec<Result<Vec<FrameResult>>> = std::thread::scope(|s| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|r| run_frame(model, r, config)).collect::<Result<Vec<_>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut frames = Vec::with_capacity(records.len());
    for r in results {
        frames.extend(r?);
    }
    let (classes, refpoints, smearing) = evaluate_frames(&frames, config)?;
    let priors = model.config().priors.label();
    Ok(EvalReport {
        model: priors.clone(),
        priors,
        split: split.to_string(),
        frames: frames.len(),
        mode: config.mode(),
        config: config.clone(),
        classes,
        refpoints,
        smearing,
    })
}

pub const PR_CSV_HEADER: &str = "model,class,matcher,recall,precision,threshold";

/// Prior labels such as `feat,loc` are written as `feat+loc` to keep the CSV flat.
fn pr_csv(report: &EvalReport) -> String {
    let model = report.model.replace(',', "+");
    let mut out = format!("{PR_CSV_HEADER}\n");
    for c in &report.classes {
        for (matcher, curve) in [
            (report.config.iou_matcher(), &c.pr_iou),
            (report.config.centroid_matcher(), &c.pr_centroid),
        ] {
            for p in &curve.points {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    model,
                    c.class.name(),
                    matcher.label(),
                    p.recall,
                    p.precision,
                    p.threshold
                );
            }
        }
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}

/// Writes `report.json` and `pr_curves.csv` into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| EvalError::Io { path: dir.to_path_buf(), source })?;
    write_file(&dir.join("report.json"), &serde_json::to_vec_pretty(report)?)?;
    write_file(&dir.join("pr_curves.csv"), pr_csv(report).as_bytes())
}

/// Reads a report from a `report.json` file or a directory containing one.
pub fn load_report(path: &Path) -> Result<EvalReport> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let bytes = fs::read(&file).map_err(|source| EvalError::Io { path: file.clone(), source })?;
    Ok(serde_json::from_slice(&bytes)?)
}
