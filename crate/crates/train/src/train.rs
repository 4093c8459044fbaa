use std::borrow::Cow;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use prior3d_detector::{Detector, FrameInput};
use prior3d_eval::{evaluate_run, EvalConfig};
use prior3d_geometry::{Cuboid, ObjectClass, NUM_CLASSES};
use prior3d_scene::{Dataset, SceneRecord};
use prior3d_tensor::{cosine_lr, AdamW, AdamWConfig, Gradients, ParamStore, Tape, DEFAULT_LR, DEFAULT_WEIGHT_DECAY};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::loss::{set_loss, LossBreakdown, LossConfig};
use crate::{Result, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Train on the first N frames only (overfitting runs).
    pub max_train_frames: Option<usize>,
    /// Validation AP every this many epochs; 0 disables it.
    pub val_every: usize,
    /// Global gradient-norm clip; `None` leaves gradients untouched.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            epochs: 24,
            batch_size: 4,
            seed: 0,
            loss: LossConfig::default(),
            max_train_frames: None,
            val_every: 1,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config("lr and weight_decay must be finite and non-negative".into()));
        }
        if self.max_train_frames == Some(0) {
            return Err(TrainError::Config("max_train_frames must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(TrainError::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        self.loss.validate()
    }
}

/// Random access to training frames, either in memory or streamed from disk.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> Result<Cow<'_, SceneRecord>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameSource for Vec<SceneRecord> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn load(&self, index: usize) -> Result<Cow<'_, SceneRecord>> {
        Ok(Cow::Borrowed(&self[index]))
    }
}

/// One dataset split, read scene by scene.
pub struct DatasetSplit<'a> {
    pub dataset: &'a Dataset,
    pub ids: Vec<String>,
}

impl<'a> DatasetSplit<'a> {
    pub fn new(dataset: &'a Dataset, split: &str) -> Result<Self> {
        let ids = dataset
            .splits
            .get(split)
            .ok_or_else(|| TrainError::Config(format!("unknown split `{split}`")))?
            .to_vec();
        Ok(Self { dataset, ids })
    }
}

impl FrameSource for DatasetSplit<'_> {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn load(&self, index: usize) -> Result<Cow<'_, SceneRecord>> {
        Ok(Cow::Owned(self.dataset.load(&self.ids[index])?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean total loss over the epoch's frames.
    pub loss: f64,
    pub cls: f64,
    pub reg: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// AP@IoU per class on the validation split; empty when not evaluated.
    pub val_ap: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub records: Vec<EpochRecord>,
}

pub const CURVE_CSV_HEADER: &str = "epoch,loss,cls_loss,box_loss,lr,val_ap_vehicle,val_ap_human";

impl LearningCurve {
    pub fn push(&mut self, record: EpochRecord) {
        assert!(
            self.records.last().is_none_or(|r| r.epoch < record.epoch),
            "epochs must increase"
        );
        self.records.push(record);
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    /// First epoch whose loss is at or below `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.records.iter().find(|r| r.loss <= target).map(|r| r.epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CURVE_CSV_HEADER}\n");
        for r in &self.records {
            let ap = |c: usize| r.val_ap.get(c).copied().flatten().map_or(String::new(), |v| v.to_string());
            let _ = writeln!(out, "{},{},{},{},{},{},{}", r.epoch, r.loss, r.cls, r.reg, r.lr, ap(0), ap(1));
        }
        out
    }
}

pub struct TrainOptions<'a> {
    /// Checkpoints, curve CSV and config sidecar go here when set.
    pub out_dir: Option<&'a Path>,
    /// Worker threads for the frames of a batch and for validation.
    pub jobs: usize,
    pub eval: EvalConfig,
    /// Load the best checkpoint's weights into the model when done.
    pub restore_best: bool,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        Self { out_dir: None, jobs: 1, eval: EvalConfig::default(), restore_best: true }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub curve: LearningCurve,
    pub best_epoch: usize,
    /// Mean validation AP@IoU, or the negated training loss without validation.
    pub best_score: f64,
    /// Set when training stopped early on a non-finite loss or gradient.
    pub aborted: Option<String>,
}

fn frame_loss(model: &Detector, record: &SceneRecord, cfg: &LossConfig) -> Result<(Gradients, LossBreakdown)> {
    let frame = FrameInput::from_record(record);
    let plan = model.plan(&frame)?;
    let mut tape = Tape::new();
    let blocks = model.forward(&mut tape, &frame, &plan)?;
    let gts: Vec<Cuboid> = record.scene.cuboids().copied().collect();
    let (loss, breakdown) = set_loss(&mut tape, &blocks, &gts, cfg)?;
    if !breakdown.total.is_finite() {
        return Err(TrainError::NonFinite(format!("loss {} on scene `{}`", breakdown.total, record.id)));
    }
    Ok((tape.backward(loss)?, breakdown))
}

/// Forward/backward of every frame of a batch on up to `jobs` threads.
/// Gradients are summed in batch order, so results do not depend on `jobs`.
fn batch_gradients(
    model: &Detector,
    source: &dyn FrameSource,
    batch: &[usize],
    cfg: &LossConfig,
    jobs: usize,
) -> Result<Vec<(Gradients, LossBreakdown)>> {
    let jobs = jobs.clamp(1, batch.len());
    let chunk = batch.len().div_ceil(jobs);
    let parts: Vec<Result<Vec<_>>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|idx| {
                s.spawn(move || {
                    idx.iter()
                        .map(|&i| frame_loss(model, &*source.load(i)?, cfg))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(batch.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn clip_grads(store: &mut ParamStore, max_norm: f64) {
    let norm = store.ids().map(|id| store.grad(id).data().iter().map(|g| g * g).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
}

fn load_all(source: &dyn FrameSource) -> Result<Vec<SceneRecord>> {
    (0..source.len()).map(|i| source.load(i).map(Cow::into_owned)).collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
}

/// Trains `model` in place with AdamW and per-step cosine decay.
///
/// Frame order is a seeded shuffle per epoch; no augmentation. With
/// `out_dir`, writes `best/` and `last/` checkpoints, `learning_curve.csv`
/// and `train_config.json`. A non-finite loss stops training, keeps the last
/// good weights and reports the reason in [`TrainOutcome::aborted`].
pub fn train(
    model: &mut Detector,
    train_set: &dyn FrameSource,
    val_set: Option<&dyn FrameSource>,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = cfg.max_train_frames.map_or(train_set.len(), |m| m.min(train_set.len()));
    if n == 0 {
        return Err(TrainError::Config("training split is empty".into()));
    }
    let jobs = opts.jobs.max(1);
    if let Some(dir) = opts.out_dir {
        fs::create_dir_all(dir).map_err(|source| TrainError::Io { path: dir.to_path_buf(), source })?;
        let sidecar = serde_json::json!({ "train": cfg, "model": model.spec, "eval": opts.eval, "train_frames": n });
        write(&dir.join("train_config.json"), &serde_json::to_vec_pretty(&sidecar)?)?;
    }
    let val_records = match val_set {
        Some(v) if cfg.val_every > 0 && !v.is_empty() => Some(load_all(v)?),
        _ => None,
    };

    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs) as u64;
    let mut opt = AdamW::new(
        AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamWConfig::default() },
        &model.store,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = LearningCurve::default();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut aborted = None;
    let mut step = 0u64;
    let mut lr = cfg.lr;

    'epochs: for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut sum, mut cls, mut reg) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let results = match batch_gradients(model, train_set, batch, &cfg.loss, jobs) {
                Ok(r) => r,
                Err(TrainError::NonFinite(msg)) => {
                    aborted = Some(msg);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            model.store.zero_grad();
            for (g, b) in &results {
                g.accumulate_into(&mut model.store);
                sum += b.total;
                cls += b.cls;
                reg += b.reg;
            }
            model.store.scale_grads(1.0 / batch.len() as f64);
            if let Some(c) = cfg.grad_clip {
                clip_grads(&mut model.store, c);
            }
            lr = cosine_lr(step, total_steps, cfg.lr)?;
            if let Err(e) = opt.step(&mut model.store, lr) {
                aborted = Some(e.to_string());
                break 'epochs;
            }
            step += 1;
        }
        let k = n as f64;
        let val_ap = match &val_records {
            Some(v) if epoch % cfg.val_every == 0 || epoch == cfg.epochs => {
                let report = evaluate_run(model, v, "val", &opts.eval, jobs)?;
                ObjectClass::ALL.iter().map(|&c| report.class(c).and_then(|r| r.ap_iou)).collect()
            }
            _ => Vec::new(),
        };
        let record = EpochRecord { epoch, loss: sum / k, cls: cls / k, reg: reg / k, lr, val_ap };
        let known: Vec<f64> = record.val_ap.iter().flatten().copied().collect();
        let score = if val_records.is_some() {
            if known.is_empty() { f64::NEG_INFINITY } else { known.iter().sum::<f64>() / known.len() as f64 }
        } else {
            -record.loss
        };
        let evaluated = val_records.is_none() || !record.val_ap.is_empty();
        if evaluated && best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((epoch, score, model.store.clone()));
            if let Some(dir) = opts.out_dir {
                model.save(&dir.join("best"), serde_json::json!({ "epoch": epoch, "score": score }))?;
            }
        }
        info!(
            "epoch {epoch}/{}: loss {:.4} (cls {:.4}, box {:.4}) lr {:.2e} val {:?} [{:.1}s]",
            cfg.epochs,
            record.loss,
            record.cls,
            record.reg,
            lr,
            record.val_ap,
            started.elapsed().as_secs_f64()
        );
        curve.push(record);
    }
    if let Some(msg) = &aborted {
        warn!("training aborted: {msg}");
    }

    if let Some(dir) = opts.out_dir {
        let epoch = curve.records.last().map_or(0, |r| r.epoch);
        model.save(&dir.join("last"), serde_json::json!({ "epoch": epoch, "aborted": aborted }))?;
        write(&dir.join("learning_curve.csv"), curve.to_csv().as_bytes())?;
    }
    let (best_epoch, best_score) = match best {
        Some((e, s, store)) => {
            if opts.restore_best {
                model.store = store;
            }
            (e, s)
        }
        None => (0, f64::NEG_INFINITY),
    };
    debug_assert!(curve.records.iter().all(|r| r.val_ap.is_empty() || r.val_ap.len() == NUM_CLASSES));
    Ok(TrainOutcome { curve, best_epoch, best_score, aborted })
}
