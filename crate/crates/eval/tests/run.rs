use prior3d_detector::{DecoderConfig, Detector, LocSource, PriorFlags};
use prior3d_eval::*;
use prior3d_scene::{build_record, GenerationConfig, SceneRecord};

fn records(n: usize) -> Vec<SceneRecord> {
    (0..n).map(|i| build_record(&format!("s{i}"), &GenerationConfig::default(), 100 + i as u64).unwrap()).collect()
}

fn model(cameras: usize) -> Detector {
    let cfg = DecoderConfig {
        d: 16,
        heads: 2,
        blocks: 2,
        feature_channels: 8,
        ffn_hidden: 16,
        priors: PriorFlags::parse("feat,loc", LocSource::Ray).unwrap(),
        ..DecoderConfig::default()
    };
    Detector::new(cfg, cameras, 3).unwrap()
}

#[test]
fn evaluate_run_is_deterministic_and_round_trips() {
    let recs = records(3);
    let m = model(6);
    let cfg = EvalConfig::default();
    let a = evaluate_run(&m, &recs, "test", &cfg, 1).unwrap();
    let b = evaluate_run(&m, &recs, "test", &cfg, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.frames, 3);
    assert_eq!(a.priors, "feat,loc");
    assert_eq!(a.mode, "raw");
    assert!(a.classes.iter().all(|c| c.num_gt == 0 || (c.ap_iou.is_some() && c.ap_centroid.is_some())));

    let dir = tempfile::tempdir().unwrap();
    write_report(dir.path(), &a).unwrap();
    assert_eq!(load_report(dir.path()).unwrap(), a);
    let csv = std::fs::read_to_string(dir.path().join("pr_curves.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(PR_CSV_HEADER));

    let nms = evaluate_run(&m, &recs, "test", &EvalConfig { nms: Some(0.1), ..cfg }, 2).unwrap();
    assert_eq!(nms.mode, "nms@0.1");
}

#[test]
fn camera_count_mismatch_is_rejected() {
    let recs = records(1);
    let err = evaluate_run(&model(4), &recs, "test", &EvalConfig::default(), 1).unwrap_err();
    assert!(matches!(err, EvalError::Mismatch(_)), "{err}");
}
