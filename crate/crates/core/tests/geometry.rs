use std::f64::consts::PI;

use paxkit::axis::AxisCodecConfig;
use paxkit::geometry::{
    box_to_point_axis_target, convex_hull, min_area_rect, obb_to_quad, quad_to_obb, quad_to_point_axis_target,
    rotated_iou, OrientedBox, Point, Quad,
};
use paxkit::verify::{brute_force_min_rect_area, monte_carlo_iou};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_box() -> impl Strategy<Value = OrientedBox> {
    (-50.0..50.0f64, -50.0..50.0f64, 0.5..30.0f64, 0.5..30.0f64, -4.0..4.0f64)
        .prop_map(|(cx, cy, w, h, t)| OrientedBox::new(cx, cy, w, h, t).unwrap())
}

fn arb_points() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64).prop_map(|(x, y)| Point::new(x, y)), 3..24)
}

fn ab(b: &OrientedBox) -> f64 {
    b.w * b.h
}

#[test]
fn offset_unit_squares_overlap_one_seventh() {
    // union 2 - 1/4 = 7/4, intersection 1/4
    let a = OrientedBox::new(0.5, 0.5, 1.0, 1.0, 0.0).unwrap();
    let b = OrientedBox::new(1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
    assert!((rotated_iou(&a, &b) - 1.0 / 7.0).abs() <= 1e-9);
}

#[test]
fn square_rotated_45_inside_itself() {
    // a unit square and the same square rotated 45 degrees: the overlap is a
    // regular octagon of area 2(sqrt2 - 1)
    let a = OrientedBox::new(0.0, 0.0, 1.0, 1.0, 0.0).unwrap();
    let b = OrientedBox::new(0.0, 0.0, 1.0, 1.0, PI / 4.0).unwrap();
    let inter = 2.0 * (2f64.sqrt() - 1.0);
    let expected = inter / (2.0 - inter);
    assert!((rotated_iou(&a, &b) - expected).abs() < 1e-12);
}

#[test]
fn disjoint_and_touching_boxes() {
    let a = OrientedBox::new(0.0, 0.0, 2.0, 2.0, 0.0).unwrap();
    let far = OrientedBox::new(10.0, 0.0, 2.0, 2.0, 0.3).unwrap();
    let touch = OrientedBox::new(2.0, 0.0, 2.0, 2.0, 0.0).unwrap();
    assert_eq!(rotated_iou(&a, &far), 0.0);
    assert!(rotated_iou(&a, &touch).abs() < 1e-12);
}

#[test]
fn monte_carlo_agrees_on_seeded_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pairs = [
        (OrientedBox::new(0.0, 0.0, 4.0, 2.0, 0.3).unwrap(), OrientedBox::new(0.5, 0.2, 3.0, 3.0, 1.1).unwrap()),
        (OrientedBox::new(1.0, 1.0, 6.0, 1.0, 2.0).unwrap(), OrientedBox::new(1.0, 1.5, 2.0, 5.0, 0.2).unwrap()),
    ];
    for (a, b) in pairs {
        let mc = monte_carlo_iou(&a, &b, 250_000, &mut rng);
        assert!((mc - rotated_iou(&a, &b)).abs() < 2e-3, "{mc} vs {}", rotated_iou(&a, &b));
    }
}

#[test]
fn quad_roundtrip_and_target_corners() {
    let b = OrientedBox::new(3.0, -2.0, 5.0, 2.0, 0.7).unwrap();
    let back = quad_to_obb(&obb_to_quad(&b)).unwrap();
    assert!(back.approx_eq(&b, 1e-9), "{back:?}");
    let t = quad_to_point_axis_target(&obb_to_quad(&b), &AxisCodecConfig::default()).unwrap();
    assert!(t.radials_consistent(1e-12));
    let want = b.corners();
    for c in t.corners() {
        assert!(want.iter().any(|w| (*w - c).norm() < 1e-6));
    }
}

#[test]
fn degenerate_quad_is_rejected() {
    let q = Quad::from_flat([0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
    assert!(quad_to_point_axis_target(&q, &AxisCodecConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_self_is_exactly_one(b in arb_box()) {
        prop_assert_eq!(rotated_iou(&b, &b), 1.0);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let ab = rotated_iou(&a, &b);
        let ba = rotated_iou(&b, &a);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn iou_translation_invariant(a in arb_box(), b in arb_box(), dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
        let d = Point::new(dx, dy);
        let moved = rotated_iou(&a.translated(d), &b.translated(d));
        prop_assert!((moved - rotated_iou(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn iou_of_contained_box_is_area_ratio(b in arb_box(), s in 0.1..1.0f64) {
        let inner = OrientedBox::new(b.cx, b.cy, b.w * s, b.h * s, b.theta).unwrap();
        prop_assert!((rotated_iou(&b, &inner) - s * s).abs() < 1e-9);
    }

    #[test]
    fn min_rect_matches_brute_force(pts in arb_points()) {
        prop_assume!(convex_hull(&pts).len() >= 3);
        let r = min_area_rect(&pts).unwrap();
        let brute = brute_force_min_rect_area(&pts);
        prop_assert!((ab(&r) - brute).abs() <= 1e-9 * brute.max(1.0), "{} vs {}", ab(&r), brute);
        for p in &pts {
            prop_assert!(r.contains(*p, 1e-7));
        }
    }

    #[test]
    fn min_rect_not_larger_than_axis_aligned(pts in arb_points()) {
        prop_assume!(convex_hull(&pts).len() >= 3);
        let r = min_area_rect(&pts).unwrap();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &pts {
            x0 = x0.min(p.x); x1 = x1.max(p.x); y0 = y0.min(p.y); y1 = y1.max(p.y);
        }
        prop_assert!(ab(&r) <= (x1 - x0) * (y1 - y0) * (1.0 + 1e-12));
    }

    #[test]
    fn min_rect_translation_equivariant(pts in arb_points(), dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
        prop_assume!(convex_hull(&pts).len() >= 3);
        let d = Point::new(dx, dy);
        let moved: Vec<Point> = pts.iter().map(|p| *p + d).collect();
        let a = min_area_rect(&pts).unwrap();
        let b = min_area_rect(&moved).unwrap();
        prop_assert!((ab(&a) - ab(&b)).abs() <= 1e-9 * ab(&a).max(1.0));
        prop_assert!((a.cx + dx - b.cx).abs() < 1e-9 && (a.cy + dy - b.cy).abs() < 1e-9);
    }

    #[test]
    fn target_corners_reproduce_box(b in arb_box()) {
        let t = box_to_point_axis_target(&b, &AxisCodecConfig::default());
        let want = b.corners();
        for c in t.corners() {
            prop_assert!(want.iter().any(|w| (*w - c).norm() < 1e-6));
        }
        prop_assert!(t.to_box().approx_eq(&b, 1e-9));
    }

    #[test]
    fn canonical_theta_in_half_turn(b in arb_box()) {
        prop_assert!((0.0..PI).contains(&b.theta));
    }
}
