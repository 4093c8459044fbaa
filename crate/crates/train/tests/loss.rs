use prior3d_detector::{yaw_to_pair, BlockOutput};
use prior3d_geometry::{Cuboid, ObjectClass};
use prior3d_tensor::{Tape, Tensor};
use prior3d_train::*;

const BIG: f64 = 40.0;

fn gt(x: f64, y: f64, class: ObjectClass) -> Cuboid {
    let ext = if class == ObjectClass::Vehicle { [4.5, 1.9, 1.6] } else { [0.8, 0.8, 1.8] };
    Cuboid::new([x, y, ext[2] / 2.0], ext, 0.4, class).unwrap()
}

/// Builds a block whose query `i` predicts `boxes[i]` with class logits `logits[i]`.
fn block(t: &mut Tape, boxes: &[[f64; 8]], logits: &[[f64; 2]]) -> BlockOutput {
    let n = boxes.len();
    let col = |r: std::ops::Range<usize>| boxes.iter().flat_map(|b| b[r.clone()].to_vec()).collect::<Vec<f64>>();
    let centers = t.leaf(Tensor::new([n, 3], col(0..3)).unwrap());
    let extents = t.leaf(Tensor::new([n, 3], col(3..6)).unwrap());
    let yaw = t.leaf(Tensor::new([n, 2], col(6..8)).unwrap());
    let logits = t.leaf(Tensor::new([n, 2], logits.iter().flatten().copied().collect()).unwrap());
    let offsets = t.constant(Tensor::zeros([n, 3]));
    BlockOutput { logits, centers, extents, yaw, offsets, ref_points: boxes.iter().map(|b| [b[0], b[1], b[2]]).collect(), invisible: 0 }
}

fn exact_box(g: &Cuboid) -> [f64; 8] {
    box_target(g)
}

fn background_box() -> [f64; 8] {
    [30.0, 30.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0]
}

#[test]
fn box_target_layout() {
    let g = gt(3.0, -2.0, ObjectClass::Vehicle);
    let [s, c] = yaw_to_pair(0.4);
    assert_eq!(box_target(&g), [3.0, -2.0, 0.8, 4.5, 1.9, 1.6, s, c]);
}

#[test]
fn perfect_prediction_costs_and_loses_nothing() {
    let gts = [gt(10.0, 0.0, ObjectClass::Vehicle), gt(-5.0, 8.0, ObjectClass::Human)];
    let mut t = Tape::new();
    let b = block(
        &mut t,
        &[background_box(), exact_box(&gts[1]), exact_box(&gts[0]), background_box()],
        &[[-BIG, -BIG], [-BIG, BIG], [BIG, -BIG], [-BIG, -BIG]],
    );
    let decoded = DecodedBlock::read(&t, &b);
    let cost = match_cost(&decoded, &gts, &LossConfig::default());
    assert_eq!((cost.len(), cost[0].len()), (4, 2));
    assert!(cost[2][0].abs() < 1e-12 && cost[1][1].abs() < 1e-12);

    let (_, loss) = set_loss(&mut t, std::slice::from_ref(&b), &gts, &LossConfig::default()).unwrap();
    assert_eq!(loss.blocks[0].matching.pairs, vec![(1, 1), (2, 0)]);
    assert!(loss.total >= 0.0 && loss.total < 1e-12, "{}", loss.total);
}

#[test]
fn unit_center_error_costs_exactly_one() {
    let g = gt(10.0, 0.0, ObjectClass::Vehicle);
    let mut shifted = exact_box(&g);
    shifted[0] += 1.0;
    let mut t = Tape::new();
    let b = block(&mut t, &[shifted], &[[BIG, -BIG]]);
    let cfg = LossConfig { lambda_box: 1.0, ..LossConfig::default() };
    let (_, loss) = set_loss(&mut t, std::slice::from_ref(&b), &[g], &cfg).unwrap();
    assert!((loss.reg - 1.0).abs() < 1e-12);
}

#[test]
fn box_weight_scales_only_the_box_term() {
    let gts = [gt(10.0, 0.0, ObjectClass::Vehicle), gt(20.0, 0.0, ObjectClass::Vehicle)];
    let mut near0 = exact_box(&gts[0]);
    near0[1] += 0.5;
    let mut near1 = exact_box(&gts[1]);
    near1[1] -= 0.25;
    // same class probability everywhere: class-only ties, box distance decides
    let mut t = Tape::new();
    let b = block(&mut t, &[near1, near0], &[[0.3, -1.0], [0.3, -1.0]]);
    let d = DecodedBlock::read(&t, &b);
    let base = LossConfig { lambda_box: 0.25, ..LossConfig::default() };
    let doubled = LossConfig { lambda_box: 0.5, ..base };
    let c1 = match_cost(&d, &gts, &base);
    let c2 = match_cost(&d, &gts, &doubled);
    let cls_only = LossConfig { lambda_box: 0.0, ..base };
    let c0 = match_cost(&d, &gts, &cls_only);
    for i in 0..2 {
        for j in 0..2 {
            let box1 = c1[i][j] - c0[i][j];
            let box2 = c2[i][j] - c0[i][j];
            assert!((box2 - 2.0 * box1).abs() < 1e-12);
        }
    }
    assert_eq!(hungarian(&c1).unwrap().pairs, vec![(0, 1), (1, 0)]);
}

#[test]
fn empty_ground_truth_is_classification_only() {
    let mut t = Tape::new();
    let b = block(&mut t, &[background_box(), background_box()], &[[0.5, -0.5], [-3.0, 2.0]]);
    let (total, loss) = set_loss(&mut t, std::slice::from_ref(&b), &[], &LossConfig::default()).unwrap();
    assert!(loss.total > 0.0);
    assert_eq!(loss.reg, 0.0);
    assert!(loss.blocks[0].matching.pairs.is_empty());
    let g = t.backward(total).unwrap();
    assert!(g.wrt(b.centers).is_none_or(|x| x.iter().all(|&v| v == 0.0)));
}

#[test]
fn unmatched_regression_outputs_get_no_gradient() {
    let gts = [gt(10.0, 0.0, ObjectClass::Vehicle)];
    let mut near = exact_box(&gts[0]);
    near[0] += 0.7;
    let mut t = Tape::new();
    let b = block(&mut t, &[background_box(), near, background_box()], &[[0.1, 0.2], [1.0, -1.0], [0.0, 0.0]]);
    let (total, loss) = set_loss(&mut t, std::slice::from_ref(&b), &gts, &LossConfig::default()).unwrap();
    assert_eq!(loss.blocks[0].matching.pairs, vec![(1, 0)]);
    let g = t.backward(total).unwrap();
    for var in [b.centers, b.extents, b.yaw] {
        let gr = g.wrt(var).unwrap();
        let w = gr.len() / 3;
        for q in [0, 2] {
            assert!(gr[q * w..(q + 1) * w].iter().all(|&v| v == 0.0));
        }
        if var == b.centers {
            assert!(gr[w..2 * w].iter().any(|&v| v != 0.0));
        }
    }
    // classification still pushes every query
    assert!(g.wrt(b.logits).unwrap().iter().all(|&v| v != 0.0));
}

#[test]
fn loss_ignores_query_and_ground_truth_order() {
    let gts = vec![gt(10.0, 0.0, ObjectClass::Vehicle), gt(-5.0, 8.0, ObjectClass::Human), gt(0.0, -20.0, ObjectClass::Vehicle)];
    let mut boxes = vec![background_box(); 6];
    let mut logits = vec![[-0.5, -1.5]; 6];
    for (k, g) in gts.iter().enumerate() {
        let mut b = exact_box(g);
        b[0] += 0.3 * k as f64;
        b[4] += 0.1;
        boxes[2 * k] = b;
        logits[2 * k] = [0.2 * k as f64, -0.1];
    }
    let eval = |boxes: &[[f64; 8]], logits: &[[f64; 2]], gts: &[Cuboid]| {
        let mut t = Tape::new();
        let b = block(&mut t, boxes, logits);
        let b2 = block(&mut t, boxes, logits);
        set_loss(&mut t, &[b, b2], gts, &LossConfig::default()).unwrap().1.total
    };
    let base = eval(&boxes, &logits, &gts);
    let perm = [3, 0, 5, 1, 4, 2];
    let pb: Vec<_> = perm.iter().map(|&i| boxes[i]).collect();
    let pl: Vec<_> = perm.iter().map(|&i| logits[i]).collect();
    let rg: Vec<_> = gts.iter().rev().copied().collect();
    assert!((eval(&pb, &pl, &gts) - base).abs() < 1e-12);
    assert!((eval(&boxes, &logits, &rg) - base).abs() < 1e-12);
    assert!(base >= 0.0);
}

#[test]
fn total_is_the_mean_over_blocks() {
    let gts = [gt(10.0, 0.0, ObjectClass::Vehicle)];
    let mut t = Tape::new();
    let a = block(&mut t, &[exact_box(&gts[0])], &[[BIG, -BIG]]);
    let mut off = exact_box(&gts[0]);
    off[0] += 2.0;
    let b = block(&mut t, &[off], &[[BIG, -BIG]]);
    let cfg = LossConfig { lambda_box: 1.0, ..LossConfig::default() };
    let (_, single) = set_loss(&mut t, std::slice::from_ref(&b), &gts, &cfg).unwrap();
    let (_, both) = set_loss(&mut t, &[a, b.clone()], &gts, &cfg).unwrap();
    assert!((both.total - single.total / 2.0).abs() < 1e-9);
    assert_eq!(both.blocks.len(), 2);
}
