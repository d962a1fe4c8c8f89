use std::io::Cursor;

use paxkit::axis::{encode_axis, AxisCodecConfig};
use paxkit::eval::{
    average_precision, read_detections, write_detections, ApProtocol, DetectionRecord, GroundTruthRecord,
};
use paxkit::geometry::{box_to_point_axis_target, OrientedBox, Point};
use paxkit::loss::{cross_axis_loss, max_projection_loss, sigmoid, ClassedTarget, LossConfig, PredictionRef};
use paxkit::matching::{cost_matrix, hungarian, matching_cost, CostMatrix};
use paxkit::verify::brute_force_assignment;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn obb(cx: f64, cy: f64, w: f64, h: f64, t: f64) -> OrientedBox {
    OrientedBox::new(cx, cy, w, h, t).unwrap()
}

fn gt(image: &str, class: &str, b: OrientedBox) -> GroundTruthRecord {
    GroundTruthRecord { image_id: image.into(), class: class.into(), bbox: b, difficult: false }
}

fn det(image: &str, class: &str, score: f64, b: OrientedBox) -> DetectionRecord {
    DetectionRecord { image_id: image.into(), class: class.into(), score, bbox: b }
}

/// Every ordered choice of `min(rows, cols)` distinct columns for the rows
/// (or rows for the columns), by recursion.
fn enumerate_min(c: &CostMatrix) -> f64 {
    fn go(c: &CostMatrix, r: usize, used: &mut Vec<bool>, left: usize) -> f64 {
        if left == 0 {
            return 0.0;
        }
        if c.rows() - r < left {
            return f64::INFINITY;
        }
        // skip row r, or assign it
        let mut best = go(c, r + 1, used, left);
        for col in 0..c.cols() {
            if !used[col] {
                used[col] = true;
                best = best.min(c.get(r, col) + go(c, r + 1, used, left - 1));
                used[col] = false;
            }
        }
        best
    }
    let k = c.rows().min(c.cols());
    go(c, 0, &mut vec![false; c.cols()], k)
}

#[test]
fn seeded_rectangular_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..200 {
        let (r, c) = if rng.gen_bool(0.5) { (2, 4) } else { (4, 2) };
        let data: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let m = CostMatrix::new(r, c, data);
        let a = hungarian(&m).unwrap();
        assert_eq!(a.len(), 2);
        assert!((m.total(&a) - enumerate_min(&m)).abs() < 1e-9);
        assert!((m.total(&a) - brute_force_assignment(&m)).abs() < 1e-9);
    }
}

#[test]
fn non_finite_cost_is_rejected() {
    let m = CostMatrix::new(2, 2, vec![0.0, f64::INFINITY, 1.0, 2.0]);
    assert!(hungarian(&m).is_err());
}

#[test]
fn hand_derived_voc12_fixture() {
    let g1 = obb(10.0, 10.0, 8.0, 4.0, 0.3);
    let g2 = obb(40.0, 40.0, 6.0, 6.0, 1.0);
    let gts = vec![gt("a", "ship", g1), gt("a", "ship", g2)];
    let dets = vec![
        det("a", "ship", 0.9, g1),
        det("a", "ship", 0.8, obb(80.0, 80.0, 5.0, 5.0, 0.0)),
        det("a", "ship", 0.7, g2),
    ];
    // precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
    let r = average_precision(&dets, &gts, 0.5, ApProtocol::Voc12);
    assert!((r.map - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-6, "{}", r.map);
    assert_eq!(r.per_class["ship"].n_tp, 2);
}

#[test]
fn perfect_and_empty_detections() {
    let boxes = [obb(5.0, 5.0, 4.0, 2.0, 0.1), obb(20.0, 8.0, 3.0, 7.0, 2.0), obb(9.0, 30.0, 5.0, 5.0, 0.7)];
    let gts: Vec<_> = boxes.iter().enumerate().map(|(i, b)| gt("img", ["a", "b", "a"][i], *b)).collect();
    let dets: Vec<_> = boxes.iter().enumerate().map(|(i, b)| det("img", ["a", "b", "a"][i], 1.0, *b)).collect();
    for p in [ApProtocol::Voc07, ApProtocol::Voc12, ApProtocol::Coco101] {
        assert_eq!(average_precision(&dets, &gts, 0.5, p).map, 1.0);
        assert_eq!(average_precision(&[], &gts, 0.5, p).map, 0.0);
    }
}

#[test]
fn difficult_ground_truth_is_neutral() {
    let a = obb(5.0, 5.0, 4.0, 2.0, 0.1);
    let b = obb(30.0, 5.0, 4.0, 2.0, 0.1);
    let mut hard = gt("i", "c", b);
    hard.difficult = true;
    let gts = vec![gt("i", "c", a), hard];
    let dets = vec![det("i", "c", 0.9, b), det("i", "c", 0.8, a)];
    assert_eq!(average_precision(&dets, &gts, 0.5, ApProtocol::Voc12).map, 1.0);
}

#[test]
fn iou_threshold_separates_map50_and_map75() {
    let g = obb(10.0, 10.0, 10.0, 4.0, 0.0);
    // shifted by 2 along w: IoU = 8 / 12
    let d = obb(12.0, 10.0, 10.0, 4.0, 0.0);
    let r50 = average_precision(&[det("x", "c", 0.5, d)], &[gt("x", "c", g)], 0.5, ApProtocol::Voc12);
    let r75 = average_precision(&[det("x", "c", 0.5, d)], &[gt("x", "c", g)], 0.75, ApProtocol::Voc12);
    assert_eq!((r50.map, r75.map), (1.0, 0.0));
    assert_eq!(r75.metric_name(), "mAP75");
    assert_eq!(r75.to_json()["mAP75"], 0.0);
}

#[test]
fn dump_rescoring_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for i in 0..6 {
        let img = format!("scene_{i:04}");
        for _ in 0..3 {
            let b = obb(
                rng.gen_range(10.0..50.0),
                rng.gen_range(10.0..50.0),
                rng.gen_range(4.0..12.0),
                rng.gen_range(4.0..12.0),
                rng.gen_range(0.0..3.0),
            );
            gts.push(gt(&img, "plane", b));
            let j = OrientedBox::new(
                b.cx + rng.gen_range(-2.0..2.0),
                b.cy,
                b.w * rng.gen_range(0.8..1.2),
                b.h,
                b.theta + rng.gen_range(-0.2..0.2),
            )
            .unwrap();
            dets.push(det(&img, "plane", rng.gen_range(0.0..1.0), j));
        }
    }
    let mut buf = Vec::new();
    write_detections(&mut buf, &dets).unwrap();
    let back = read_detections(Cursor::new(&buf)).unwrap();
    let first = average_precision(&back, &gts, 0.5, ApProtocol::Voc12);
    // a second write/read cycle is a fixpoint of the dump
    let mut buf2 = Vec::new();
    write_detections(&mut buf2, &back).unwrap();
    let again = read_detections(Cursor::new(&buf2)).unwrap();
    let second = average_precision(&again, &gts, 0.5, ApProtocol::Voc12);
    assert_eq!(first.map.to_bits(), second.map.to_bits());
    for (a, b) in dets.iter().zip(&back) {
        assert_eq!(a.score, b.score);
        assert!(a.bbox.approx_eq(&b.bbox, 1e-9));
    }
    assert!(read_detections(Cursor::new("a b 0.5 1 2 3")).is_err());
}

fn perfect_points(t: &paxkit::geometry::PointAxisTarget) -> Vec<Point> {
    let c = t.corners();
    vec![c[0], c[1], c[2], c[3], t.center]
}

#[test]
fn matching_cost_components() {
    let cfg = LossConfig::default();
    let rect = obb(0.5, 0.5, 0.4, 0.2, 0.3);
    let t = box_to_point_axis_target(&rect, &cfg.codec);
    let target = ClassedTarget { target: t.clone(), class: 1 };
    let perfect = perfect_points(&t);
    let axis: Vec<f64> = t.axis.values.iter().map(|&a| if a > 0.999 { 30.0 } else { -30.0 }).collect();
    let cls = [-30.0, 30.0];
    let good = PredictionRef { points: &perfect, axis_logits: &axis, class_logits: &cls };
    let c = matching_cost(&good, &target, &cfg).unwrap();
    // the smooth label costs a little BCE even at the best logits
    let axis_term = cross_axis_loss(&axis, &t.axis, &cfg.codec).unwrap().value;
    assert!((c - (cfg.lambda2 * axis_term - cfg.cls_weight * sigmoid(30.0))).abs() < 1e-9);

    let shifted: Vec<Point> = perfect.iter().map(|p| *p + Point::new(0.05, 0.0)).collect();
    let bad = PredictionRef { points: &shifted, axis_logits: &axis, class_logits: &cls };
    assert!(matching_cost(&bad, &target, &cfg).unwrap() > c);
}

#[test]
fn perfect_saturated_prediction_costs_minus_cls_weight() {
    let cfg = LossConfig { codec: AxisCodecConfig { sigma: 0.0, ..Default::default() }, ..Default::default() };
    let t = box_to_point_axis_target(&obb(0.4, 0.6, 0.3, 0.1, 1.0), &cfg.codec);
    let pts = perfect_points(&t);
    let axis: Vec<f64> = t.axis.values.iter().map(|&a| if a == 1.0 { 40.0 } else { -40.0 }).collect();
    let cls = [40.0];
    let p = PredictionRef { points: &pts, axis_logits: &axis, class_logits: &cls };
    let c = matching_cost(&p, &ClassedTarget { target: t, class: 0 }, &cfg).unwrap();
    assert!((c + cfg.cls_weight).abs() < 1e-9, "{c}");
}

#[test]
fn seeded_cost_matrix_equals_recomputation() {
    let cfg =
        LossConfig { codec: AxisCodecConfig { n_bins: 16, sigma: 1.0, ..Default::default() }, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let targets: Vec<ClassedTarget> = (0..3)
        .map(|i| ClassedTarget {
            target: box_to_point_axis_target(
                &obb(rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), 0.2, 0.1, rng.gen_range(0.0..3.0)),
                &cfg.codec,
            ),
            class: i % 2,
        })
        .collect();
    let points: Vec<Vec<Point>> = (0..3).map(|_| (0..5).map(|_| Point::new(rng.gen(), rng.gen())).collect()).collect();
    let axis: Vec<Vec<f64>> = (0..3).map(|_| (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let cls: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let preds: Vec<PredictionRef> =
        (0..3).map(|i| PredictionRef { points: &points[i], axis_logits: &axis[i], class_logits: &cls[i] }).collect();
    let m = cost_matrix(&preds, &targets, &cfg).unwrap();
    for (i, p) in preds.iter().enumerate() {
        for (j, t) in targets.iter().enumerate() {
            let proj = max_projection_loss(p.points, &t.target).unwrap().value;
            // per-bin BCE written out directly
            let enc = encode_axis(0.0, &cfg.codec).values.len();
            assert_eq!(enc, 16);
            let bce: f64 = p
                .axis_logits
                .iter()
                .zip(&t.target.axis.values)
                .map(|(&z, &a)| -(a * sigmoid(z).ln() + (1.0 - a) * (1.0 - sigmoid(z)).ln()))
                .sum::<f64>()
                / 16.0;
            let want = cfg.lambda1 * proj + cfg.lambda2 * bce - cfg.cls_weight * sigmoid(p.class_logits[t.class]);
            assert!((m.get(i, j) - want).abs() < 1e-9, "({i}, {j}): {} vs {want}", m.get(i, j));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hungarian_equals_brute_force(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(0.0..10.0f64).round()).collect();
        let m = CostMatrix::new(rows, cols, data);
        let a = hungarian(&m).unwrap();
        prop_assert_eq!(a.len(), rows.min(cols));
        prop_assert!((m.total(&a) - brute_force_assignment(&m)).abs() < 1e-9);
    }

    #[test]
    fn removing_false_positive_never_lowers_ap(seed in any::<u64>(), drop_pick in any::<prop::sample::Index>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gts: Vec<_> = (0..4).map(|i| gt("i", "c", obb(20.0 * i as f64 + 10.0, 10.0, 6.0, 3.0, 0.2))).collect();
        let mut dets = Vec::new();
        for g in &gts {
            if rng.gen_bool(0.7) {
                dets.push(det("i", "c", rng.gen(), g.bbox));
            }
        }
        let n_fp = rng.gen_range(1..5);
        for _ in 0..n_fp {
            dets.push(det("i", "c", rng.gen(), obb(rng.gen_range(0.0..80.0), 60.0, 4.0, 4.0, 0.0)));
        }
        let before = average_precision(&dets, &gts, 0.5, ApProtocol::Voc12).map;
        let fps: Vec<usize> = (dets.len() - n_fp..dets.len()).collect();
        dets.remove(fps[drop_pick.index(fps.len())]);
        let after = average_precision(&dets, &gts, 0.5, ApProtocol::Voc12).map;
        prop_assert!(after >= before - 1e-12, "{before} -> {after}");
    }
}
