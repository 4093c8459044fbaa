use prior3d_eval::*;
use prior3d_geometry::{bev_iou, centroid_distance_bev, Camera, Cuboid, ObjectClass, Vec3};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V: ObjectClass = ObjectClass::Vehicle;
const H: ObjectClass = ObjectClass::Human;

fn car(x: f64, y: f64) -> Cuboid {
    Cuboid::new([x, y, 0.8], [4.5, 1.9, 1.6], 0.3, V).unwrap()
}

fn det(c: Cuboid, score: f64) -> Detection {
    Detection { cuboid: c, score }
}

#[test]
fn single_exact_detection_has_ap_one() {
    let frames = [FrameEval { detections: vec![det(car(10.0, 3.0), 0.7)], gts: vec![car(10.0, 3.0)] }];
    for m in [Matcher::Iou(0.1), Matcher::Centroid(4.0)] {
        let r = ap_class(&frames, V, m, 50.0);
        assert_eq!(r.ap, Some(1.0));
    }
    // no human ground truth: AP is absent rather than zero
    assert_eq!(ap_class(&frames, H, Matcher::Iou(0.1), 50.0).ap, None);
}

#[test]
fn false_positive_then_true_positive() {
    let frames = [FrameEval {
        detections: vec![det(car(30.0, -20.0), 0.9), det(car(10.0, 3.0), 0.8)],
        gts: vec![car(10.0, 3.0)],
    }];
    let r = ap_class(&frames, V, Matcher::Iou(0.1), 50.0);
    let pts: Vec<(f64, f64)> = r.curve.points.iter().map(|p| (p.recall, p.precision)).collect();
    assert_eq!(pts, vec![(0.0, 0.0), (1.0, 0.5)]);
    assert_eq!(r.ap, Some(0.5));
}

#[test]
fn range_filter_applies_to_both_sides() {
    let far = car(45.0, 30.0);
    let frames = [FrameEval { detections: vec![det(far, 0.9), det(car(5.0, 5.0), 0.5)], gts: vec![far, car(5.0, 5.0)] }];
    let r = ap_class(&frames, V, Matcher::Iou(0.1), 50.0);
    assert_eq!(r.num_gt, 1);
    assert_eq!(r.num_detections, 1);
    assert_eq!(r.ap, Some(1.0));
}

#[test]
fn each_ground_truth_is_claimed_once() {
    let frames = [FrameEval { detections: vec![det(car(10.0, 3.0), 0.9), det(car(10.2, 3.0), 0.8)], gts: vec![car(10.0, 3.0)] }];
    let r = ap_class(&frames, V, Matcher::Centroid(4.0), 50.0);
    let last = r.curve.points.last().unwrap();
    assert_eq!((last.recall, last.precision), (1.0, 0.5));
    assert_eq!(r.ap, Some(1.0));
}

#[test]
fn pr_curve_thinning_keeps_ends() {
    let curve = PRCurve {
        points: (0..10).map(|i| PrPoint { recall: i as f64 / 9.0, precision: 1.0, threshold: 1.0 - i as f64 / 10.0 }).collect(),
    };
    let t = curve.thinned(4);
    assert_eq!(t.points.len(), 4);
    assert_eq!(t.points[0], curve.points[0]);
    assert_eq!(t.points[3], curve.points[9]);
    assert_eq!(curve.thinned(0), curve);
}

// ---- exhaustive-threshold oracle -------------------------------------------

/// Independent reference: for every distinct score, recompute the greedy
/// matching from scratch on the detections at or above it and read off one
/// PR point; integrate the resulting step curve.
fn oracle_ap(frames: &[FrameEval], class: ObjectClass, m: Matcher, range: f64) -> Option<f64> {
    let ok = |c: &Cuboid| c.class() == class && c.bev_center()[0].hypot(c.bev_center()[1]) <= range;
    let gts: Vec<Vec<Cuboid>> = frames.iter().map(|f| f.gts.iter().copied().filter(ok).collect()).collect();
    let total: usize = gts.iter().map(Vec::len).sum();
    if total == 0 {
        return None;
    }
    let mut dets: Vec<(usize, Detection)> = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        for d in &f.detections {
            if ok(&d.cuboid) {
                dets.push((fi, *d));
            }
        }
    }
    let nearest = |fi: usize, d: &Detection| gts[fi].iter().map(|g| centroid_distance_bev(&d.cuboid, g)).fold(f64::INFINITY, f64::min);
    let mut thresholds: Vec<f64> = dets.iter().map(|(_, d)| d.score).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let mut prev_r = 0.0;
    let mut area = 0.0;
    for t in thresholds {
        let mut subset: Vec<&(usize, Detection)> = dets.iter().filter(|(_, d)| d.score >= t).collect();
        subset.sort_by(|a, b| detection_order((&a.1, a.0, nearest(a.0, &a.1)), (&b.1, b.0, nearest(b.0, &b.1))));
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut tp = 0;
        for (fi, d) in subset.iter().map(|x| (x.0, x.1)) {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts[fi].iter().enumerate() {
                if used[fi][j] {
                    continue;
                }
                let q = match m {
                    Matcher::Iou(th) => {
                        let v = bev_iou(&d.cuboid, g);
                        if v < th { continue; }
                        v
                    }
                    Matcher::Centroid(th) => {
                        let v = centroid_distance_bev(&d.cuboid, g);
                        if v > th { continue; }
                        -v
                    }
                };
                if best.is_none_or(|(_, bq)| q > bq) {
                    best = Some((j, q));
                }
            }
            if let Some((j, _)) = best {
                used[fi][j] = true;
                tp += 1;
            }
        }
        let r = tp as f64 / total as f64;
        let p = tp as f64 / subset.len() as f64;
        area += (r - prev_r) * p;
        prev_r = r;
    }
    Some(area)
}

fn random_instance(rng: &mut ChaCha8Rng) -> Vec<FrameEval> {
    let nframes = rng.gen_range(1..=3);
    let mut frames: Vec<FrameEval> = (0..nframes).map(|_| FrameEval::default()).collect();
    for f in frames.iter_mut() {
        for _ in 0..rng.gen_range(0..=5) {
            let class = if rng.gen_bool(0.6) { V } else { H };
            let ext = if class == V { [4.5, 1.9, 1.6] } else { [0.8, 0.8, 1.8] };
            let c = [rng.gen_range(-55.0..55.0), rng.gen_range(-55.0..55.0), 0.8];
            f.gts.push(Cuboid::new(c, ext, rng.gen_range(-3.0..3.0), class).unwrap());
        }
    }
    let ndet = rng.gen_range(0..=20);
    for _ in 0..ndet {
        let fi = rng.gen_range(0..nframes);
        let f = &mut frames[fi];
        let (centre, class) = match f.gts.choose(rng) {
            Some(g) if rng.gen_bool(0.7) => {
                let c = g.center_array();
                ([c[0] + rng.gen_range(-3.0..3.0), c[1] + rng.gen_range(-3.0..3.0), c[2]], g.class())
            }
            _ => ([rng.gen_range(-55.0..55.0), rng.gen_range(-55.0..55.0), 0.8], if rng.gen_bool(0.5) { V } else { H }),
        };
        let ext = if class == V { [rng.gen_range(3.0..5.5), rng.gen_range(1.5..2.2), 1.6] } else { [0.7, 0.7, 1.8] };
        // coarse scores force plenty of ties
        let score = rng.gen_range(1..=8) as f64 / 8.0;
        f.detections.push(det(Cuboid::new(centre, ext, rng.gen_range(-3.0..3.0), class).unwrap(), score));
    }
    frames
}

#[test]
fn ap_matches_exhaustive_threshold_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let frames = random_instance(&mut rng);
        for m in [Matcher::Iou(0.1), Matcher::Centroid(4.0)] {
            for class in ObjectClass::ALL {
                let got = ap_class(&frames, class, m, 50.0).ap;
                assert_eq!(got, oracle_ap(&frames, class, m, 50.0), "case {case} {m:?} {class:?}");
            }
        }
    }
}

#[test]
fn ap_ignores_input_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let frames = random_instance(&mut rng);
        let mut shuffled = frames.clone();
        for f in shuffled.iter_mut() {
            f.detections.shuffle(&mut rng);
            f.gts.shuffle(&mut rng);
        }
        for m in [Matcher::Iou(0.1), Matcher::Centroid(4.0)] {
            for class in ObjectClass::ALL {
                let a = ap_class(&frames, class, m, 50.0).ap;
                let b = ap_class(&shuffled, class, m, 50.0).ap;
                match (a, b) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                    (a, b) => assert_eq!(a, b),
                }
            }
        }
    }
}

#[test]
fn curve_invariants_and_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let frames = random_instance(&mut rng);
        for class in ObjectClass::ALL {
            let r = ap_class(&frames, class, Matcher::Iou(0.1), 50.0);
            assert!(r.curve.points.windows(2).all(|w| w[1].recall >= w[0].recall));
            assert!(r.curve.points.iter().all(|p| (0.0..=1.0).contains(&p.precision)));
            if let Some(ap) = r.ap {
                assert!((0.0..=1.0).contains(&ap));
            }
            // an unbounded centroid gate turns AP into a detection-count bound
            let loose = ap_class(&frames, class, Matcher::Centroid(f64::INFINITY), 50.0);
            if let Some(p) = loose.curve.points.last() {
                let ok = |c: &Cuboid| c.class() == class && c.bev_center()[0].hypot(c.bev_center()[1]) <= 50.0;
                let reachable: usize = frames
                    .iter()
                    .map(|f| {
                        let d = f.detections.iter().filter(|d| ok(&d.cuboid)).count();
                        d.min(f.gts.iter().filter(|g| ok(g)).count())
                    })
                    .sum();
                let cap = reachable as f64 / r.num_gt as f64;
                assert!((p.recall - cap).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn appending_a_lowest_score_detection_only_costs_final_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let mut frames = random_instance(&mut rng);
        let before = ap_class(&frames, V, Matcher::Iou(0.1), 50.0);
        let Some(a0) = before.ap else { continue };
        frames[0].detections.push(det(car(1.0, 1.0), 0.01));
        let after = ap_class(&frames, V, Matcher::Iou(0.1), 50.0).ap.unwrap();
        assert!(after >= a0 - 1e-12, "{after} < {a0}");
    }
}

// ---- reference points ------------------------------------------------------

#[test]
fn refpoint_recall_examples() {
    let gts = vec![car(10.0, 0.0), car(-20.0, 5.0), car(60.0, 0.0)];
    let refs = vec![[10.0, 0.0, 0.8], [-20.0, 7.0, 0.8]];
    let s = refpoint_recall(&[(refs, gts.clone())], 50.0);
    assert_eq!(s.distances.len(), 2);
    assert_eq!(s.recall(0.0), 0.5);
    assert_eq!(s.recall(2.5), 1.0);
    let empty = refpoint_recall(&[(vec![], gts)], 50.0);
    assert_eq!(empty.recall(100.0), 0.0);
    assert_eq!(empty.empty_query_frames, 1);
}

proptest! {
    #[test]
    fn refpoint_recall_is_monotone(seed in 0u64..1000, mut radii in proptest::collection::vec(0.0f64..30.0, 2..10)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gts: Vec<Cuboid> = (0..8).map(|_| car(rng.gen_range(-45.0..45.0), rng.gen_range(-45.0..45.0))).collect();
        let refs: Vec<[f64; 3]> = (0..20).map(|_| [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), 0.5]).collect();
        let s = refpoint_recall(&[(refs, gts)], 50.0);
        prop_assert!(s.distances.iter().all(|&d| d >= 0.0));
        radii.sort_by(f64::total_cmp);
        let recalls: Vec<f64> = radii.iter().map(|&r| s.recall(r)).collect();
        prop_assert!(recalls.windows(2).all(|w| w[1] >= w[0]));
    }
}

// ---- smearing ----------------------------------------------------------------

fn rig() -> Vec<Camera> {
    (0..6)
        .map(|i| Camera::mounted(Vec3::new(0.0, 0.0, 1.6), i as f64 * std::f64::consts::FRAC_PI_3, 90.0, (160, 96)).unwrap())
        .collect()
}

#[test]
fn smearing_index_examples() {
    let cams = rig();
    let gts = vec![car(20.0, 0.0), car(0.0, -30.0), car(-15.0, 15.0)];
    let none = smearing_index(&[SmearingFrame { detections: &[], gts: &gts, cameras: &cams }], 0.3, 2.0, 50.0);
    assert_eq!(none.mean, 0.0);

    let exact: Vec<Detection> = gts.iter().map(|g| det(*g, 0.9)).collect();
    let one = smearing_index(&[SmearingFrame { detections: &exact, gts: &gts, cameras: &cams }], 0.3, 2.0, 50.0);
    assert_eq!(one.mean, 1.0);

    let doubled: Vec<Detection> = exact.iter().chain(&exact).copied().collect();
    let two = smearing_index(&[SmearingFrame { detections: &doubled, gts: &gts, cameras: &cams }], 0.3, 2.0, 50.0);
    assert_eq!(two.mean, 2.0);

    // a string of detections along the ray to the first object, plus
    // low-score and off-corridor ones that must not count
    let mut smear = vec![det(car(8.0, 0.5), 0.5), det(car(30.0, -1.0), 0.4), det(car(45.0, 0.0), 0.35)];
    smear.push(det(car(25.0, 0.0), 0.1));
    smear.push(det(car(20.0, 6.0), 0.9));
    smear.push(det(car(-20.0, 0.0), 0.9));
    let s = smearing_index(&[SmearingFrame { detections: &smear, gts: &gts[..1], cameras: &cams }], 0.3, 2.0, 50.0);
    assert_eq!(s.counts, vec![3]);
}

#[test]
fn nms_keeps_the_best_of_overlapping_boxes() {
    let dets = vec![det(car(10.0, 0.0), 0.5), det(car(10.3, 0.0), 0.9), det(car(20.0, 0.0), 0.3)];
    let kept = bev_nms(&dets, 0.1);
    assert_eq!(kept.len(), 2);
    assert_eq!(kept[0].score, 0.9);
    // different classes never suppress each other
    let human = Cuboid::new([10.0, 0.0, 0.9], [0.8, 0.8, 1.8], 0.0, H).unwrap();
    assert_eq!(bev_nms(&[det(car(10.0, 0.0), 0.9), det(human, 0.8)], 0.1).len(), 2);
}

#[test]
fn frame_metrics_and_config_checks() {
    let cams = rig();
    let gts = vec![car(20.0, 0.0), Cuboid::new([0.0, -12.0, 0.9], [0.8, 0.8, 1.8], 0.0, H).unwrap()];
    let frames = vec![FrameResult {
        detections: gts.iter().map(|g| det(*g, 0.8)).collect(),
        gts: gts.clone(),
        ref_points: gts.iter().map(|g| g.center_array()).collect(),
        cameras: cams,
    }];
    let cfg = EvalConfig::default();
    let (classes, rp, sm) = evaluate_frames(&frames, &cfg).unwrap();
    for c in &classes {
        assert_eq!(c.ap_iou, Some(1.0));
        assert_eq!(c.ap_centroid, Some(1.0));
        assert_eq!(c.centroid_ge_iou, Some(true));
    }
    assert_eq!(rp.recall, 1.0);
    assert_eq!(sm.index, 1.0);

    assert!(EvalConfig { smearing_tau: 1.0, ..cfg.clone() }.validate().is_err());
    assert!(EvalConfig { iou_threshold: 0.0, ..cfg.clone() }.validate().is_err());
    assert!(EvalConfig { nms: Some(2.0), ..cfg.clone() }.validate().is_err());
    assert_eq!(EvalConfig { nms: Some(0.2), ..cfg }.mode(), "nms@0.2");
}

