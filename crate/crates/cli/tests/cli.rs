use std::path::Path;
use std::process::Command;

use prior3d_cli::*;
use prior3d_eval::{ClassReport, EvalConfig, EvalReport, PRCurve, PrPoint, RefPointSummary, SmearingSummary};
use prior3d_geometry::ObjectClass;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_prior3d"));
    c.env_remove("PRIOR3D_DATA").env("RUST_LOG", "warn");
    c
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_is_reproducible_and_guarded() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        run_ok(bin().args(["gen-data", "--seed", "7", "--scenes", "10", "--jobs", "2", "--out"]).arg(d));
    }
    assert_eq!(dir_bytes(&a), dir_bytes(&b));

    let ds = prior3d_scene::read_dataset(&a).unwrap();
    assert_eq!(ds.meta.scene_count, 10);
    let manifests = std::fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path().join("manifest.json").exists()).count();
    assert_eq!(manifests, 10);
    let mut all: Vec<&String> = ds.splits.all().collect();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 10, "splits overlap");
    assert!(!ds.splits.train.is_empty() && !ds.splits.test.is_empty());

    // non-empty target without --force
    let out = bin().args(["gen-data", "--scenes", "3", "--out"]).arg(&a).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    run_ok(bin().args(["gen-data", "--scenes", "3", "--force", "--out"]).arg(&a));
    assert_eq!(prior3d_scene::read_dataset(&a).unwrap().meta.scene_count, 3);

    // the data root may come from the environment
    let c = tmp.path().join("c");
    run_ok(bin().args(["gen-data", "--scenes", "3"]).env("PRIOR3D_DATA", &c));
    assert!(c.join("dataset.json").exists());
}

#[test]
fn split_scaling_keeps_proportions() {
    let cfg = RunConfig::default();
    assert_eq!(cfg.scaled_splits(10).unwrap().iter().sum::<usize>(), 10);
    assert_eq!(cfg.scaled_splits(2400).unwrap(), [2000, 200, 200]);
    assert_eq!(cfg.scaled_splits(1).unwrap(), [1, 0, 0]);
    assert!(cfg.scaled_splits(0).is_err());
}

#[test]
fn config_rejects_unknown_keys_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n[training]\nepochs = 2\nwarmup = 5\n").unwrap();
    let err = RunConfig::load(Some(&bad)).unwrap_err();
    assert!(format!("{err:#}").contains("warmup"), "{err:#}");

    let good = tmp.path().join("good.toml");
    std::fs::write(&good, "seed = 3\nsplits = [4, 1, 1]\n[model]\nd = 16\nheads = 2\n[training]\nepochs = 1\n").unwrap();
    let cfg = RunConfig::load(Some(&good)).unwrap();
    assert_eq!((cfg.seed, cfg.model.d, cfg.training.epochs), (3, 16, 1));
    assert_eq!(cfg.model.blocks, 6);

    let out = tmp.path().join("ds");
    run_ok(bin().arg("--config").arg(&good).args(["--seed", "9", "gen-data", "--out"]).arg(&out));
    let echoed: RunConfig = serde_json::from_slice(&std::fs::read(out.join(RUN_CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(echoed.seed, 9);
    assert_eq!(prior3d_scene::read_dataset(&out).unwrap().meta.scene_count, 6);
}

#[test]
fn invalid_prior_combination_is_rejected() {
    let mut cfg = RunConfig::default();
    assert!(apply_prior_flags(&mut cfg, Some("feat,loc,query"), Some(prior3d_detector::LocSource::Lidar)).is_err());
    assert!(apply_prior_flags(&mut cfg, Some("feat,query"), None).is_err());
    apply_prior_flags(&mut cfg, Some("none"), None).unwrap();
    assert_eq!(cfg.model.priors, prior3d_detector::PriorFlags::VANILLA);

    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--data"])
        .arg(tmp.path())
        .args(["--out"])
        .arg(tmp.path().join("run"))
        .args(["--priors", "feat,loc,query", "--loc-source", "lidar"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("query"));
}

#[test]
fn train_eval_compare_plot_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("tiny.toml");
    std::fs::write(
        &cfg_path,
        "splits = [4, 2, 2]\n[model]\nd = 16\nheads = 2\nblocks = 2\nfeature_channels = 8\nffn_hidden = 16\nvanilla_queries = 20\n[training]\nepochs = 2\nbatch_size = 2\nlr = 0.001\n",
    )
    .unwrap();
    let data = tmp.path().join("data");
    run_ok(bin().arg("--config").arg(&cfg_path).args(["gen-data", "--out"]).arg(&data));

    let mut reports = Vec::new();
    for (name, priors) in [("vanilla", "none"), ("ray", "feat,loc,query")] {
        let run = tmp.path().join(name);
        run_ok(bin().arg("--config").arg(&cfg_path).args(["train", "--priors", priors, "--data"]).arg(&data).arg("--out").arg(&run));
        for f in ["best/manifest.json", "last/params.bin", "learning_curve.csv", "train_config.json", RUN_CONFIG_FILE] {
            assert!(run.join(f).exists(), "{name}: {f} missing");
        }
        let stdout = run_ok(bin().args(["eval", "--checkpoint"]).arg(&run).arg("--data").arg(&data));
        assert!(stdout.contains("VEHICLE"));
        let report_dir = run.join("eval_test");
        let report = prior3d_eval::load_report(&report_dir).unwrap();
        assert_eq!(report.split, "test");
        assert_eq!(report.priors, if priors == "none" { "vanilla" } else { "feat,loc,query" });
        assert_eq!(report.mode, "raw");
        reports.push(report_dir);
    }

    // deterministic evaluation
    let again = tmp.path().join("again");
    run_ok(bin().args(["eval", "--checkpoint"]).arg(tmp.path().join("vanilla")).arg("--data").arg(&data).arg("--out").arg(&again));
    assert_eq!(std::fs::read(again.join("report.json")).unwrap(), std::fs::read(reports[0].join("report.json")).unwrap());

    let table = run_ok(bin().arg("compare").args(&reports));
    assert!(table.contains("verdict:"));
    let self_cmp = run_ok(bin().arg("compare").arg(&reports[0]).arg(&reports[0]));
    assert!(self_cmp.contains("(+0.00)") && !self_cmp.contains("(-"));
    assert!(self_cmp.contains("verdict: FAIL"));

    // with NMS the evaluation config differs, so reports do not compare
    let nms = tmp.path().join("nms");
    run_ok(bin().args(["eval", "--nms", "0.1", "--checkpoint"]).arg(tmp.path().join("ray")).arg("--data").arg(&data).arg("--out").arg(&nms));
    assert!(!bin().arg("compare").arg(&reports[0]).arg(&nms).output().unwrap().status.success());

    let svg = tmp.path().join("pr.svg");
    run_ok(bin().arg("plot").arg(reports[0].join("pr_curves.csv")).arg(reports[1].join("pr_curves.csv")).arg("--out").arg(&svg));
    roxmltree::Document::parse(&std::fs::read_to_string(&svg).unwrap()).unwrap();
    let curves = tmp.path().join("curves.svg");
    run_ok(bin().arg("plot").arg(tmp.path().join("vanilla/learning_curve.csv")).arg(tmp.path().join("ray/learning_curve.csv")).arg("--out").arg(&curves));
    let text = std::fs::read_to_string(&curves).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let labels: Vec<&str> = doc.descendants().filter(|n| n.attribute("class") == Some("legend")).filter_map(|n| n.text()).collect();
    assert_eq!(labels, vec!["vanilla", "ray"]);
}

#[test]
fn missing_checkpoint_and_bad_overfit_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin().args(["eval", "--checkpoint"]).arg(tmp.path()).arg("--data").arg(tmp.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no checkpoint"));
}

fn report(model: &str, vehicle: f64, human: f64) -> EvalReport {
    let class = |class, ap: f64| ClassReport {
        class,
        num_gt: 10,
        num_detections: 10,
        ap_iou: Some(ap),
        ap_centroid: Some(ap + 0.01),
        centroid_ge_iou: Some(true),
        pr_iou: PRCurve { points: vec![PrPoint { recall: 0.5, precision: 1.0, threshold: 0.5 }] },
        pr_centroid: PRCurve::default(),
    };
    EvalReport {
        model: model.into(),
        priors: model.into(),
        split: "test".into(),
        frames: 1,
        mode: "raw".into(),
        config: EvalConfig::default(),
        classes: vec![class(ObjectClass::Vehicle, vehicle), class(ObjectClass::Human, human)],
        refpoints: RefPointSummary { radius: 2.5, recall: 1.0, mean_distance: None, num_gt: 0, empty_query_frames: 0 },
        smearing: SmearingSummary { tau: 0.3, width: 2.0, index: 0.0, num_gt: 0 },
    }
}

#[test]
fn compare_formats_deltas_and_verdicts() {
    assert_eq!(format_delta(0.0936), "(+9.36)");
    assert_eq!(format_delta(-0.005), "(-0.50)");
    assert_eq!(format_delta(-1e-9), "(+0.00)");
    let rising = [report("vanilla", 0.7057, 0.5), report("feat", 0.7240, 0.5), report("feat,loc", 0.7993, 0.6), report("feat,loc,query", 0.8201, 0.6)];
    let c = compare(&rising).unwrap();
    assert!(c.ordering_holds);
    assert!(c.table.contains("72.40 (+1.83)"));
    assert!(c.table.contains("79.93 (+9.36)"));
    assert!(c.table.contains("82.01 (+11.44)"));
    assert!(c.table.contains("verdict: PASS"));
    let mut inverted = rising.clone();
    inverted.swap(1, 2);
    let c = compare(&inverted).unwrap();
    assert!(!c.ordering_holds && c.table.contains("verdict: FAIL"));
    assert!(compare(&rising[..1]).is_err());
    let mut other = rising.clone();
    other[1].config.iou_threshold = 0.5;
    assert!(compare(&other).is_err());
}

#[test]
fn plot_handles_empty_and_malformed_input() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, format!("{}\n", prior3d_eval::PR_CSV_HEADER)).unwrap();
    let svg = tmp.path().join("e.svg");
    cmd_plot(&[&empty], &svg).unwrap();
    roxmltree::Document::parse(&std::fs::read_to_string(&svg).unwrap()).unwrap();

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, format!("{}\n1,2.0,3,4,0.1,\n2,x,1,1,0.1,,\n", prior3d_train::CURVE_CSV_HEADER)).unwrap();
    let err = cmd_plot(&[&bad], &svg).unwrap_err();
    assert!(format!("{err}").contains(":2:"), "{err}");
    let bad2 = tmp.path().join("bad2.csv");
    std::fs::write(&bad2, format!("{}\n1,2.0,3,4,0.1,,\n2,x,1,1,0.1,,\n", prior3d_train::CURVE_CSV_HEADER)).unwrap();
    let err = cmd_plot(&[&bad2], &svg).unwrap_err();
    assert!(format!("{err}").contains(":3:"), "{err}");
    assert!(cmd_plot(&[&empty, &bad2], &svg).is_err());

    // deterministic output
    let s1 = render_svg(&panels_from_csv(&[&empty]).unwrap());
    let s2 = render_svg(&panels_from_csv(&[&empty]).unwrap());
    assert_eq!(s1, s2);
}
