use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use prior3d_detector::{Detector, LocSource, PriorFlags};
use prior3d_eval::{evaluate_run, load_report, write_report, EvalReport};
use prior3d_geometry::ObjectClass;
use prior3d_scene::{generate_dataset, read_dataset, Dataset};
use prior3d_train::{train, DatasetSplit, FrameSource, TrainOptions, TrainOutcome};

use crate::config::RunConfig;

pub const RUN_CONFIG_FILE: &str = "run_config.json";

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// Refuses to reuse a non-empty directory unless `force`, in which case it is
/// cleared first.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?.next().is_some();
        if non_empty {
            if !force {
                bail!("{} exists and is not empty; pass --force to overwrite it", dir.display());
            }
            fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes a full dataset. `scenes` overrides the configured split sizes with
/// a total that keeps their proportions.
pub fn gen_data(cfg: &RunConfig, out: &Path, scenes: Option<usize>, jobs: usize, force: bool) -> Result<Dataset> {
    cfg.validate()?;
    let counts = match scenes {
        Some(n) => cfg.scaled_splits(n)?,
        None => cfg.splits,
    };
    prepare_out_dir(out, force)?;
    info!("generating {counts:?} scenes into {}", out.display());
    let ds = generate_dataset(out, &cfg.generation(), counts, cfg.seed, jobs)?;
    write_json(&out.join(RUN_CONFIG_FILE), cfg)?;
    Ok(ds)
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub out: &'a Path,
    pub overfit: Option<usize>,
    pub jobs: usize,
    pub force: bool,
}

/// Trains the variant described by `cfg.model` on the dataset's train split.
/// Overfitting runs use the first `overfit` train scenes and skip validation.
pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    if let Some(n) = args.overfit {
        ensure!(n > 0, "--overfit needs a positive frame count");
        cfg.training.max_train_frames = Some(n);
        cfg.training.val_every = 0;
    }
    cfg.validate()?;
    let ds = read_dataset(args.data)?;
    let cams = ds.meta.generation.scene.rig.num_cameras;
    let train_split = DatasetSplit::new(&ds, "train")?;
    ensure!(!train_split.is_empty(), "dataset {} has an empty train split", args.data.display());
    let val_split = DatasetSplit::new(&ds, "val")?;
    prepare_out_dir(args.out, args.force)?;
    write_json(&args.out.join(RUN_CONFIG_FILE), &cfg)?;

    let mut model = Detector::new(cfg.model, cams, cfg.seed)?;
    cfg.training.seed = cfg.seed;
    let val: Option<&dyn FrameSource> = (args.overfit.is_none() && !val_split.is_empty()).then_some(&val_split as _);
    let opts = TrainOptions { out_dir: Some(args.out), jobs: args.jobs, eval: cfg.eval.clone(), restore_best: true };
    info!("training `{}` on {} scenes", cfg.model.priors.label(), train_split.len());
    Ok(train(&mut model, &train_split, val, &cfg.training, &opts)?)
}

/// A run directory resolves to its best checkpoint; a checkpoint directory is
/// used as is.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join("manifest.json").exists() {
        return Ok(path.to_path_buf());
    }
    for sub in ["best", "last"] {
        if path.join(sub).join("manifest.json").exists() {
            return Ok(path.join(sub));
        }
    }
    bail!("no checkpoint found at {}", path.display())
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub split: &'a str,
    pub out: &'a Path,
    pub nms: Option<f64>,
    pub jobs: usize,
}

pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<EvalReport> {
    let mut eval_cfg = cfg.eval.clone();
    if args.nms.is_some() {
        eval_cfg.nms = args.nms;
    }
    eval_cfg.validate()?;
    let ckpt = resolve_checkpoint(args.checkpoint)?;
    let (model, _) = Detector::load(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let ds = read_dataset(args.data)?;
    let cams = ds.meta.generation.scene.rig.num_cameras;
    ensure!(
        cams == model.spec.num_cameras,
        "checkpoint expects {} cameras but the dataset has {cams}",
        model.spec.num_cameras
    );
    let records = ds.load_split(args.split)?;
    let mut report = evaluate_run(&model, &records, args.split, &eval_cfg, args.jobs)?;
    // the run's own sidecar names the variant when present
    let run_dir = if ckpt.join(RUN_CONFIG_FILE).exists() { ckpt.clone() } else { ckpt.parent().unwrap_or(&ckpt).to_path_buf() };
    if let Ok(bytes) = fs::read(run_dir.join(RUN_CONFIG_FILE)) {
        let run: RunConfig = serde_json::from_slice(&bytes).context("reading the run's config sidecar")?;
        ensure!(
            run.model.priors == model.config().priors,
            "checkpoint prior flags `{}` disagree with the run config `{}`",
            model.config().priors.label(),
            run.model.priors.label()
        );
        report.priors = run.model.priors.label();
        report.model = report.priors.clone();
    }
    write_report(args.out, &report)?;
    Ok(report)
}

/// `(+9.36)` style delta of two AP values given as fractions.
pub fn format_delta(delta: f64) -> String {
    let mut d = (delta * 100.0 * 100.0).round() / 100.0;
    if d == 0.0 {
        d = 0.0;
    }
    format!("({d:+.2})")
}

fn fmt_ap(ap: Option<f64>) -> String {
    ap.map_or("-".into(), |a| format!("{:.2}", a * 100.0))
}

pub struct Comparison {
    pub table: String,
    /// The reports' VEHICLE AP@IoU strictly increases in the given order.
    pub ordering_holds: bool,
}

/// Tabulates AP per class against the first report and checks that VEHICLE
/// AP@IoU rises strictly from each report to the next.
pub fn compare(reports: &[EvalReport]) -> Result<Comparison> {
    ensure!(reports.len() >= 2, "compare needs at least two reports");
    let base = &reports[0];
    for r in &reports[1..] {
        ensure!(
            r.config == base.config && r.split == base.split && r.mode == base.mode,
            "report `{}` was evaluated differently from `{}` (config, split or NMS mode)",
            r.model,
            base.model
        );
    }
    let ap = |r: &EvalReport, c: ObjectClass, centroid: bool| {
        r.class(c).and_then(|x| if centroid { x.ap_centroid } else { x.ap_iou })
    };
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<22} {:>18} {:>18} {:>18} {:>18}",
        "model", "VEHICLE AP@0.1", "HUMAN AP@0.1", "VEHICLE AP@4m", "HUMAN AP@4m"
    );
    for r in reports {
        let mut line = format!("{:<22}", r.model);
        for (class, centroid) in [
            (ObjectClass::Vehicle, false),
            (ObjectClass::Human, false),
            (ObjectClass::Vehicle, true),
            (ObjectClass::Human, true),
        ] {
            let cell = match (ap(r, class, centroid), ap(base, class, centroid)) {
                (Some(a), Some(b)) => format!("{:.2} {}", a * 100.0, format_delta(a - b)),
                (a, _) => fmt_ap(a),
            };
            let _ = write!(line, " {cell:>18}");
        }
        let _ = writeln!(table, "{}", line.trim_end());
    }
    let vehicle: Vec<Option<f64>> = reports.iter().map(|r| ap(r, ObjectClass::Vehicle, false)).collect();
    let ordering_holds = vehicle.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b > a));
    let names: Vec<&str> = reports.iter().map(|r| r.model.as_str()).collect();
    let _ = writeln!(
        table,
        "verdict: {} (VEHICLE AP@{} ordering {})",
        if ordering_holds { "PASS" } else { "FAIL" },
        base.config.iou_threshold,
        names.join(" < ")
    );
    Ok(Comparison { table, ordering_holds })
}

pub fn cmd_compare(paths: &[PathBuf]) -> Result<Comparison> {
    let reports = paths
        .iter()
        .map(|p| load_report(p).with_context(|| format!("loading report {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    compare(&reports)
}

/// Applies `--priors` / `--loc-source` on top of the configured flags.
pub fn apply_prior_flags(cfg: &mut RunConfig, priors: Option<&str>, loc_source: Option<LocSource>) -> Result<()> {
    let source = loc_source.unwrap_or(cfg.model.priors.loc_source);
    let flags = match priors {
        Some(p) => PriorFlags::parse(p, source)?,
        None => PriorFlags { loc_source: source, ..cfg.model.priors },
    };
    flags.validate()?;
    cfg.model.priors = flags;
    Ok(())
}
