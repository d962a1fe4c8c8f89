use std::f64::consts::{FRAC_PI_2, TAU};

use paxkit::axis::{encode_axis, AxisCodecConfig};
use paxkit::geometry::{box_to_point_axis_target, OrientedBox, Point, PointAxisTarget};
use paxkit::loss::{
    classification_loss, cross_axis_loss, focal_term, max_projection_loss, max_projection_variant, sigmoid,
    ProjectionVariant,
};
use proptest::prelude::*;

/// Direct transcription of the max-projection loss: per radial direction the
/// farthest boundary projection minus the radial length, plus the center gap.
fn naive_projection(pred: &[Point], t: &PointAxisTarget) -> f64 {
    let (boundary, center) = pred.split_at(pred.len() - 1);
    let mut total = 0.0;
    for v in t.radials {
        let u = v * (1.0 / v.norm());
        let far = boundary.iter().map(|p| (*p - t.center).dot(u)).fold(f64::NEG_INFINITY, f64::max);
        total += (far - v.norm()).abs();
    }
    total + (center[0] - t.center).norm()
}

fn target(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> PointAxisTarget {
    box_to_point_axis_target(&OrientedBox::new(cx, cy, w, h, theta).unwrap(), &AxisCodecConfig::default())
}

fn rotate_about_origin(p: Point, a: f64) -> Point {
    p.rotate(a)
}

fn arb_case() -> impl Strategy<Value = (Vec<Point>, PointAxisTarget)> {
    let pts = prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y)| Point::new(x, y)), 5..14);
    let tgt = (-1.0..1.0f64, -1.0..1.0f64, 0.5..4.0f64, 0.5..4.0f64, 0.0..TAU)
        .prop_map(|(cx, cy, w, h, t)| target(cx, cy, w, h, t));
    (pts, tgt)
}

#[test]
fn zero_loss_when_each_edge_touched_and_center_exact() {
    let t = target(2.0, -1.0, 4.0, 2.0, 0.4);
    let c = t.corners();
    // a corner touches two edges; two opposite corners touch all four
    let mut pts = vec![c[0], c[2], t.center + t.radials[0] * 0.2, t.center];
    pts.insert(0, t.center + t.radials[1] * 0.5);
    assert!(max_projection_loss(&pts, &t).unwrap().value < 1e-12);
}

#[test]
fn positive_loss_when_an_edge_is_untouched() {
    let t = target(0.0, 0.0, 4.0, 2.0, 0.0);
    // every boundary point strictly inside: all four edges untouched
    let pts = vec![
        Point::new(1.0, 0.0),
        Point::new(-1.0, 0.0),
        Point::new(0.0, 0.5),
        Point::new(0.0, -0.5),
        Point::default(),
    ];
    let v = max_projection_loss(&pts, &t).unwrap().value;
    assert!((v - (1.0 + 1.0 + 0.5 + 0.5)).abs() < 1e-12);

    // a point outside one edge: that edge's term is the overshoot
    let pts = vec![
        Point::new(2.5, 0.0),
        Point::new(-2.0, 0.0),
        Point::new(0.0, 1.0),
        Point::new(0.0, -1.0),
        Point::default(),
    ];
    assert!((max_projection_loss(&pts, &t).unwrap().value - 0.5).abs() < 1e-12);
}

#[test]
fn all_points_at_center_sum_radial_lengths() {
    let t = target(5.0, 3.0, 6.0, 2.0, 1.2);
    let pts = vec![t.center; 13];
    let expected: f64 = t.radials.iter().map(|v| v.norm()).sum();
    assert!((expected - 8.0).abs() < 1e-12);
    assert!((max_projection_loss(&pts, &t).unwrap().value - expected).abs() < 1e-12);
}

#[test]
fn square_axis_swap_is_exact() {
    let a = box_to_point_axis_target(&OrientedBox::new(0.0, 0.0, 2.0, 2.0, 0.3).unwrap(), &AxisCodecConfig::default());
    let b = box_to_point_axis_target(
        &OrientedBox::new(0.0, 0.0, 2.0, 2.0, 0.3 + FRAC_PI_2).unwrap(),
        &AxisCodecConfig::default(),
    );
    let c = AxisCodecConfig::default();
    assert_eq!(encode_axis(0.3, &c), encode_axis(0.3 + FRAC_PI_2, &c));
    // the same square with radials relabelled by a quarter turn
    let mut swapped = a.clone();
    swapped.radials = [a.radials[1], a.radials[2], a.radials[3], a.radials[0]];
    let pts = vec![
        Point::new(0.9, 0.3),
        Point::new(-0.4, 1.1),
        Point::new(-1.2, -0.1),
        Point::new(0.2, -0.7),
        Point::new(0.05, -0.02),
    ];
    for variant in [ProjectionVariant::Max, ProjectionVariant::WithPenalty, ProjectionVariant::TopK(2)] {
        let la = max_projection_variant(&pts, &a, variant).unwrap().value;
        assert_eq!(la, max_projection_variant(&pts, &swapped, variant).unwrap().value);
    }
    assert_eq!(a.axis, b.axis);
}

#[test]
fn cross_axis_seam_has_no_extra_jump() {
    let c = AxisCodecConfig::default();
    let logits: Vec<f64> = (0..c.n_bins).map(|b| ((b * 7919) % 13) as f64 / 6.0 - 1.0).collect();
    let loss = |deg: f64| cross_axis_loss(&logits, &encode_axis(deg.to_radians(), &c), &c).unwrap().value;
    let steps: Vec<f64> = (0..=3600).map(|i| i as f64 * 0.1).collect();
    let mut interior: f64 = 0.0;
    for w in steps.windows(2) {
        interior = interior.max((loss(w[1]) - loss(w[0])).abs());
    }
    let seam = (loss(0.0) - loss(359.9)).abs().max((loss(360.0) - loss(359.9)).abs());
    assert!(seam <= interior * 1.01, "seam {seam} interior {interior}");
}

#[test]
fn focal_matches_closed_form() {
    let (alpha, gamma) = (0.25, 2.0);
    for z in [-4.0, -0.5, 0.0, 1.3, 6.0] {
        let p = sigmoid(z);
        let pos = -alpha * (1.0 - p).powf(gamma) * p.ln();
        let neg = -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln();
        assert!((focal_term(z, true, alpha, gamma).0 - pos).abs() < 1e-12);
        assert!((focal_term(z, false, alpha, gamma).0 - neg).abs() < 1e-12);
    }
    // two queries, one positive: normalized by one
    let out = classification_loss(&[0.0, 0.0, 0.0, 0.0], 2, &[Some(1), None], alpha, gamma).unwrap();
    let (pos, neg) = (focal_term(0.0, true, alpha, gamma).0, focal_term(0.0, false, alpha, gamma).0);
    assert!((out.value - (pos + 3.0 * neg)).abs() < 1e-12);
}

#[test]
fn cross_axis_uniform_logits_is_ln2() {
    let c = AxisCodecConfig::default();
    let v = cross_axis_loss(&vec![0.0; 360], &encode_axis(1.0, &c), &c).unwrap().value;
    assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn projection_matches_naive((pts, t) in arb_case()) {
        let got = max_projection_loss(&pts, &t).unwrap().value;
        prop_assert!((got - naive_projection(&pts, &t)).abs() < 1e-12);
    }

    #[test]
    fn projection_rotation_invariant((pts, t) in arb_case(), angle in 0.0..TAU) {
        let rot_pts: Vec<Point> = pts.iter().map(|p| rotate_about_origin(*p, angle)).collect();
        let mut rot_t = t.clone();
        rot_t.center = rotate_about_origin(t.center, angle);
        rot_t.radials = t.radials.map(|v| v.rotate(angle));
        for variant in [ProjectionVariant::Max, ProjectionVariant::WithPenalty, ProjectionVariant::TopK(2)] {
            let a = max_projection_variant(&pts, &t, variant).unwrap().value;
            let b = max_projection_variant(&rot_pts, &rot_t, variant).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-9, "{variant:?}: {a} vs {b}");
        }
    }

    #[test]
    fn penalty_never_below_plain((pts, t) in arb_case()) {
        let plain = max_projection_loss(&pts, &t).unwrap().value;
        let pen = max_projection_variant(&pts, &t, ProjectionVariant::WithPenalty).unwrap().value;
        prop_assert!(pen >= plain - 1e-12);
    }

    #[test]
    fn zero_loss_implies_inside_and_touching((_, t) in arb_case(), fr in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 2..6)) {
        // points inside the rectangle plus the two opposite corners
        let [v1, v2, _, _] = t.radials;
        let c = t.corners();
        let mut pts = vec![c[0], c[2]];
        pts.extend(fr.iter().map(|(a, b)| t.center + v1 * *a + v2 * *b));
        pts.push(t.center);
        prop_assert!(max_projection_loss(&pts, &t).unwrap().value < 1e-9);
        // pulling one corner inward leaves an untouched edge
        pts[0] = t.center + (c[0] - t.center) * 0.9;
        let only_inside = fr.iter().all(|(a, b)| a.abs() < 0.9 && b.abs() < 0.9);
        if only_inside {
            prop_assert!(max_projection_loss(&pts, &t).unwrap().value > 1e-6);
        }
    }
}
