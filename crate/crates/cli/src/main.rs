use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use prior3d_cli::*;
use prior3d_detector::LocSource;

#[derive(Parser)]
#[command(name = "prior3d", version, about = "Multi-camera 3D detection with 2D priors on a synthetic world")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for generation, training batches and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Ray,
    Lidar,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with train/val/test splits.
    GenData {
        #[arg(long, env = "PRIOR3D_DATA")]
        out: PathBuf,
        /// Total scene count, split in the configured proportions.
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Train one detector variant.
    Train {
        #[arg(long, env = "PRIOR3D_DATA")]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// none | feat | feat,loc | feat,loc,query
        #[arg(long)]
        priors: Option<String>,
        #[arg(long, value_enum)]
        loc_source: Option<Source>,
        /// Train on the first N frames without validation.
        #[arg(long)]
        overfit: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        /// Run directory or checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, env = "PRIOR3D_DATA")]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Report directory (default: <checkpoint>/eval_<split>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Apply BEV NMS at this IoU before scoring.
        #[arg(long)]
        nms: Option<f64>,
    },
    /// Compare evaluation reports against the first one.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Exit with status 1 when the ordering verdict fails.
        #[arg(long)]
        strict: bool,
    },
    /// Render PR-curve or learning-curve CSV files as SVG.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::GenData { out, scenes, force } => {
            let ds = gen_data(&cfg, &out, scenes, cli.jobs, force)?;
            println!(
                "wrote {} scenes ({} train / {} val / {} test) to {}",
                ds.meta.scene_count,
                ds.splits.train.len(),
                ds.splits.val.len(),
                ds.splits.test.len(),
                out.display()
            );
        }
        Command::Train { data, out, priors, loc_source, overfit, epochs, force } => {
            let source = loc_source.map(|s| match s {
                Source::Ray => LocSource::Ray,
                Source::Lidar => LocSource::Lidar,
            });
            apply_prior_flags(&mut cfg, priors.as_deref(), source).context("invalid prior flags")?;
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            let outcome = cmd_train(&cfg, &TrainArgs { data: &data, out: &out, overfit, jobs: cli.jobs, force })?;
            if let Some(reason) = &outcome.aborted {
                eprintln!("training aborted: {reason}");
                return Ok(ExitCode::FAILURE);
            }
            println!(
                "trained `{}`: final loss {:.4}, best epoch {}; artifacts in {}",
                cfg.model.priors.label(),
                outcome.curve.final_loss().unwrap_or(f64::NAN),
                outcome.best_epoch,
                out.display()
            );
        }
        Command::Eval { checkpoint, data, split, out, nms } => {
            let out = out.unwrap_or_else(|| checkpoint.join(format!("eval_{split}")));
            let report = cmd_eval(&cfg, &EvalArgs { checkpoint: &checkpoint, data: &data, split: &split, out: &out, nms, jobs: cli.jobs })?;
            for c in &report.classes {
                println!(
                    "{:<8} AP@{} {}  AP@{}m {}",
                    c.class.name(),
                    report.config.iou_threshold,
                    c.ap_iou.map_or("-".into(), |a| format!("{:.2}", a * 100.0)),
                    report.config.centroid_threshold,
                    c.ap_centroid.map_or("-".into(), |a| format!("{:.2}", a * 100.0)),
                );
            }
            println!("smearing index {:.3}, reference-point recall {:.3}", report.smearing.index, report.refpoints.recall);
            println!("report written to {}", out.display());
        }
        Command::Compare { reports, strict } => {
            let cmp = cmd_compare(&reports)?;
            print!("{}", cmp.table);
            if strict && !cmp.ordering_holds {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Plot { inputs, out } => {
            cmd_plot(&inputs, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
