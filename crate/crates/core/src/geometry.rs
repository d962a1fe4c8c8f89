//! Rotated-rectangle and convex-polygon geometry.
//!
//! Boxes are stored as `(cx, cy, w, h, theta)` with `w` measured along the
//! direction `theta` (radians, counter-clockwise from the image x-axis) and
//! `h` along the perpendicular. All polygons are kept counter-clockwise in the
//! mathematical sense, i.e. with positive shoelace area.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::axis::{self, AxisCodecConfig, AxisEncoding, AxisError};

/// Absolute tolerance on cross products for collinearity and inside tests.
pub const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate quad: minimum-area rectangle side {side:e} below tolerance")]
    DegenerateQuad { side: f64 },
    #[error("degenerate point set: {0}")]
    DegeneratePointSet(&'static str),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("point set needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error(transparent)]
    Axis(#[from] AxisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Rotates by +90 degrees.
    pub fn perp(self) -> Point {
        Point::new(-self.y, self.x)
    }

    pub fn rotate(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn unit(angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c, s)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// A rotated rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// Rotation of the `w` side, in `[0, pi)`.
    pub theta: f64,
}

impl OrientedBox {
    /// Builds a box, reducing `theta` into `[0, pi)`.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self, GeometryError> {
        let finite = [cx, cy, w, h, theta].iter().all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidBox("non-finite field".into()));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::InvalidBox(format!("sides must be positive, got w={w} h={h}")));
        }
        Ok(Self { cx, cy, w, h, theta: reduce_angle(theta, PI) })
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Unit vector along the `w` side.
    pub fn axis_u(&self) -> Point {
        Point::unit(self.theta)
    }

    /// Corners in counter-clockwise order, starting at the `(-w/2, -h/2)` corner.
    pub fn corners(&self) -> [Point; 4] {
        let u = self.axis_u();
        let v = u.perp();
        let c = self.center();
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [c - u * hw - v * hh, c + u * hw - v * hh, c + u * hw + v * hh, c - u * hw + v * hh]
    }

    /// Canonical storage form: `theta` in `[0, pi/2)`, swapping `w` and `h`
    /// when a quarter turn is removed. Every rectangle has exactly one such form.
    pub fn canonical(&self) -> OrientedBox {
        let (mut w, mut h) = (self.w, self.h);
        let mut t = reduce_angle(self.theta, PI);
        if t >= FRAC_PI_2 {
            t -= FRAC_PI_2;
            std::mem::swap(&mut w, &mut h);
        }
        if FRAC_PI_2 - t < 1e-12 {
            t = 0.0;
            std::mem::swap(&mut w, &mut h);
        }
        OrientedBox { cx: self.cx, cy: self.cy, w, h, theta: t }
    }

    pub fn translated(&self, d: Point) -> OrientedBox {
        OrientedBox { cx: self.cx + d.x, cy: self.cy + d.y, ..*self }
    }

    /// True if both boxes describe the same rectangle within `tol`, accounting
    /// for the quarter-turn and half-turn symmetries.
    pub fn approx_eq(&self, other: &OrientedBox, tol: f64) -> bool {
        let a = self.canonical();
        let b = other.canonical();
        if (a.cx - b.cx).abs() > tol || (a.cy - b.cy).abs() > tol {
            return false;
        }
        let dt = angle_diff(a.theta, b.theta, FRAC_PI_2);
        if dt <= tol {
            return (a.w - b.w).abs() <= tol && (a.h - b.h).abs() <= tol;
        }
        // square-ish boxes near the seam: theta ~ 0 vs theta ~ pi/2 - eps
        false
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        let d = p - self.center();
        let u = self.axis_u();
        let pu = d.dot(u).abs();
        let pv = d.dot(u.perp()).abs();
        pu <= self.w / 2.0 + tol && pv <= self.h / 2.0 + tol
    }

    pub fn to_quad(&self) -> Quad {
        Quad { corners: self.corners() }
    }

    pub fn to_polygon(&self) -> ConvexPolygon {
        ConvexPolygon { vertices: self.corners().to_vec() }
    }
}

/// Reduces `angle` into `[0, period)`; values that round to `period` map to 0.
pub fn reduce_angle(angle: f64, period: f64) -> f64 {
    let r = angle.rem_euclid(period);
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Smallest distance between two angles on a circle of the given period.
pub fn angle_diff(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// Four corner points, as found in DOTA-style annotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub corners: [Point; 4],
}

impl Quad {
    pub fn new(corners: [Point; 4]) -> Self {
        Self { corners }
    }

    pub fn from_flat(c: [f64; 8]) -> Self {
        Self::new([Point::new(c[0], c[1]), Point::new(c[2], c[3]), Point::new(c[4], c[5]), Point::new(c[6], c[7])])
    }

    pub fn to_flat(&self) -> [f64; 8] {
        let c = &self.corners;
        [c[0].x, c[0].y, c[1].x, c[1].y, c[2].x, c[2].y, c[3].x, c[3].y]
    }

    pub fn signed_area(&self) -> f64 {
        shoelace(&self.corners)
    }

    /// Same corners, reordered to counter-clockwise if needed.
    pub fn ccw(&self) -> Quad {
        if self.signed_area() < 0.0 {
            let c = self.corners;
            Quad::new([c[0], c[3], c[2], c[1]])
        } else {
            *self
        }
    }

    /// False for bow-tie orderings where opposite edges cross.
    pub fn is_simple(&self) -> bool {
        let c = &self.corners;
        !segments_cross(c[0], c[1], c[2], c[3]) && !segments_cross(c[1], c[2], c[3], c[0])
    }

    pub fn translated(&self, d: Point) -> Quad {
        Quad::new(self.corners.map(|p| p + d))
    }
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Signed polygon area; positive for counter-clockwise vertex order.
pub fn shoelace(pts: &[Point]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += pts[i].cross(pts[(i + 1) % n]);
    }
    acc / 2.0
}

/// Convex polygon with counter-clockwise vertices. Zero vertices is the empty polygon.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexPolygon {
    pub vertices: Vec<Point>,
}

impl ConvexPolygon {
    pub fn empty() -> Self {
        Self { vertices: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    pub fn area(&self) -> f64 {
        shoelace(&self.vertices).max(0.0)
    }

    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return true;
        }
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            (b - a).cross(c - b) >= -GEOM_EPS
        })
    }
}

/// Intersection of two convex counter-clockwise polygons (Sutherland-Hodgman).
pub fn convex_clip(subject: &ConvexPolygon, clip: &ConvexPolygon) -> ConvexPolygon {
    if subject.is_empty() || clip.is_empty() {
        return ConvexPolygon::empty();
    }
    let mut output = subject.vertices.clone();
    let m = clip.vertices.len();
    for e in 0..m {
        if output.is_empty() {
            break;
        }
        let a = clip.vertices[e];
        let b = clip.vertices[(e + 1) % m];
        let edge = b - a;
        let input = std::mem::take(&mut output);
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let cur_side = edge.cross(cur - a);
            let prev_side = edge.cross(prev - a);
            let cur_in = cur_side >= -GEOM_EPS;
            let prev_in = prev_side >= -GEOM_EPS;
            if cur_in {
                if !prev_in {
                    output.push(line_cross(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_cross(prev, cur, prev_side, cur_side));
            }
        }
    }
    output.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
    while output.len() > 1 && (output[0] - output[output.len() - 1]).norm() < 1e-12 {
        output.pop();
    }
    if output.len() < 3 || shoelace(&output) <= 0.0 {
        return ConvexPolygon::empty();
    }
    ConvexPolygon { vertices: output }
}

// Point on segment p->q where the signed side value crosses zero.
fn line_cross(p: Point, q: Point, sp: f64, sq: f64) -> Point {
    let t = sp / (sp - sq);
    p + (q - p) * t
}

/// Intersection-over-union of two rotated rectangles, in `[0, 1]`.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    // fixed evaluation order makes the result exactly symmetric
    let (first, second) = if box_key(a) <= box_key(b) { (a, b) } else { (b, a) };
    let pa = first.to_polygon();
    let pb = second.to_polygon();
    let area_a = pa.area();
    let area_b = pb.area();
    let inter = convex_clip(&pa, &pb).area();
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

fn box_key(b: &OrientedBox) -> [u64; 5] {
    [b.cx, b.cy, b.w, b.h, b.theta].map(|v| v.to_bits() ^ (1 << 63))
}

/// Convex hull, counter-clockwise, without collinear vertices (monotone chain).
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if (b - a).cross(p - a) <= GEOM_EPS {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Relative area difference below which two caliper rectangles are tied.
const AREA_TIE_REL: f64 = 1e-9;

/// Minimum-area enclosing rectangle via rotating calipers over the convex hull.
///
/// The result is in canonical form (`theta` in `[0, pi/2)`).
pub fn min_area_rect(points: &[Point]) -> Result<OrientedBox, GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::TooFewPoints { needed: 3, got: points.len() });
    }
    let hull = convex_hull(points);
    if hull.len() < 3 || shoelace(&hull) <= GEOM_EPS {
        return Err(GeometryError::DegeneratePointSet("all points collinear"));
    }
    let n = hull.len();
    let next = |i: usize| (i + 1) % n;

    let mut candidates: Vec<(f64, OrientedBox)> = Vec::with_capacity(n);
    // caliper indices: farthest along edge, farthest from edge, farthest against edge
    let (mut far_u, mut far_n, mut near_u) = (0usize, 0usize, 0usize);
    for i in 0..n {
        let a = hull[i];
        let edge = hull[next(i)] - a;
        let len = edge.norm();
        let u = edge * (1.0 / len);
        let nrm = u.perp();
        if i == 0 {
            far_u = next(i);
        }
        while (hull[next(far_u)] - hull[far_u]).dot(u) > 0.0 {
            far_u = next(far_u);
        }
        if i == 0 {
            far_n = far_u;
        }
        while (hull[next(far_n)] - hull[far_n]).dot(nrm) > 0.0 {
            far_n = next(far_n);
        }
        if i == 0 {
            near_u = far_n;
        }
        while (hull[next(near_u)] - hull[near_u]).dot(u) < 0.0 {
            near_u = next(near_u);
        }
        let u_max = (hull[far_u] - a).dot(u);
        let u_min = (hull[near_u] - a).dot(u);
        let n_max = (hull[far_n] - a).dot(nrm);
        let w = u_max - u_min;
        let h = n_max;
        let c = a + u * ((u_min + u_max) / 2.0) + nrm * (n_max / 2.0);
        let theta = u.y.atan2(u.x);
        candidates.push((w * h, OrientedBox { cx: c.x, cy: c.y, w, h, theta }));
    }
    // Edges whose areas tie up to rounding (an acute triangle has three) are
    // resolved by hull order, which starts at the lowest-x vertex, so the
    // choice survives translation of the input.
    let min_area = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let (_, rect) =
        *candidates.iter().find(|c| c.0 <= min_area * (1.0 + AREA_TIE_REL)).expect("hull has at least three edges");
    if rect.w.min(rect.h) < GEOM_EPS {
        return Err(GeometryError::DegeneratePointSet("zero-width enclosing rectangle"));
    }
    Ok(rect.canonical())
}

/// Corners of the box; inverse of [`quad_to_obb`] up to symmetry.
pub fn obb_to_quad(b: &OrientedBox) -> Quad {
    b.to_quad()
}

/// Minimum-area rectangle of a quad, in canonical form.
pub fn quad_to_obb(quad: &Quad) -> Result<OrientedBox, GeometryError> {
    min_area_rect(&quad.corners).map_err(|e| match e {
        GeometryError::DegeneratePointSet(_) => GeometryError::DegenerateQuad { side: 0.0 },
        other => other,
    })
}

/// Ground truth in point-axis form: a center, four radial vectors to the
/// rectangle edges and the orientation label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointAxisTarget {
    pub center: Point,
    /// Perpendicular feet from the center on each edge, relative to the center.
    /// `radials[2] == -radials[0]` and `radials[3] == -radials[1]`.
    pub radials: [Point; 4],
    pub axis: AxisEncoding,
}

impl PointAxisTarget {
    /// Rectangle corners `center ± v1 ± v2`, counter-clockwise.
    pub fn corners(&self) -> [Point; 4] {
        let [v1, v2, _, _] = self.radials;
        let c = self.center;
        [c - v1 - v2, c + v1 - v2, c + v1 + v2, c - v1 + v2]
    }

    pub fn to_box(&self) -> OrientedBox {
        let [v1, v2, _, _] = self.radials;
        OrientedBox {
            cx: self.center.x,
            cy: self.center.y,
            w: 2.0 * v1.norm(),
            h: 2.0 * v2.norm(),
            theta: reduce_angle(v1.y.atan2(v1.x), PI),
        }
    }

    /// Checks the radial-pair structure within a relative tolerance.
    pub fn radials_consistent(&self, rel_tol: f64) -> bool {
        let [v1, v2, v3, v4] = self.radials;
        let scale = v1.norm().max(v2.norm()).max(1e-300);
        (v1 + v3).norm() <= rel_tol * scale
            && (v2 + v4).norm() <= rel_tol * scale
            && v1.dot(v2).abs() <= rel_tol * scale * scale
    }
}

/// Converts an annotated quad into the point-axis target of its minimum-area rectangle.
pub fn quad_to_point_axis_target(quad: &Quad, codec: &AxisCodecConfig) -> Result<PointAxisTarget, GeometryError> {
    let rect = quad_to_obb(quad)?;
    let side = rect.w.min(rect.h);
    if side < GEOM_EPS {
        return Err(GeometryError::DegenerateQuad { side });
    }
    Ok(box_to_point_axis_target(&rect, codec))
}

pub fn box_to_point_axis_target(rect: &OrientedBox, codec: &AxisCodecConfig) -> PointAxisTarget {
    let u = rect.axis_u();
    let v = u.perp();
    let v1 = u * (rect.w / 2.0);
    let v2 = v * (rect.h / 2.0);
    PointAxisTarget { center: rect.center(), radials: [v1, v2, -v1, -v2], axis: axis::encode_axis(rect.theta, codec) }
}

/// Decodes predicted points plus axis logits into a rotated box.
///
/// The first `K-1` points are boundary points; the last is the predicted
/// center and does not take part in the extent computation. An empty
/// `axis_logits` slice selects the fixed horizontal axis.
pub fn decode_point_axis(
    points: &[Point],
    axis_logits: &[f64],
    codec: &AxisCodecConfig,
) -> Result<OrientedBox, GeometryError> {
    if points.len() < 5 {
        return Err(GeometryError::TooFewPoints { needed: 5, got: points.len() });
    }
    let phi = if axis_logits.is_empty() {
        0.0
    } else {
        if axis_logits.len() != codec.n_bins {
            return Err(AxisError::InvalidConfig(format!(
                "expected {} axis logits, got {}",
                codec.n_bins,
                axis_logits.len()
            ))
            .into());
        }
        axis::decode_axis(axis_logits)?.principal_reduced
    };
    Ok(extent_box(&points[..points.len() - 1], phi))
}

/// Tightest box with orientation `phi` around the given points.
pub fn extent_box(points: &[Point], phi: f64) -> OrientedBox {
    let u = Point::unit(phi);
    let v = u.perp();
    let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &p in points {
        let pu = p.dot(u);
        let pv = p.dot(v);
        umin = umin.min(pu);
        umax = umax.max(pu);
        vmin = vmin.min(pv);
        vmax = vmax.max(pv);
    }
    let c = u * ((umin + umax) / 2.0) + v * ((vmin + vmax) / 2.0);
    OrientedBox {
        cx: c.x,
        cy: c.y,
        w: (umax - umin).max(GEOM_EPS),
        h: (vmax - vmin).max(GEOM_EPS),
        theta: reduce_angle(phi, PI),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn sq(x0: f64, y0: f64, s: f64) -> OrientedBox {
        OrientedBox::new(x0 + s / 2.0, y0 + s / 2.0, s, s, 0.0).unwrap()
    }

    fn codec0() -> AxisCodecConfig {
        AxisCodecConfig { sigma: 0.0, ..Default::default() }
    }

    #[test]
    fn box_corners_axis_aligned() {
        let b = OrientedBox::new(1.0, 1.0, 2.0, 2.0, 0.0).unwrap();
        let c = b.corners();
        let want = [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)];
        for (p, (x, y)) in c.iter().zip(want) {
            assert!((p.x - x).abs() < 1e-12 && (p.y - y).abs() < 1e-12);
        }
        assert!(shoelace(&c) > 0.0);
    }

    #[test]
    fn quarter_turn_roundtrip_is_canonical() {
        let b = OrientedBox::new(0.0, 0.0, 2.0, 1.0, FRAC_PI_2).unwrap();
        let back = quad_to_obb(&obb_to_quad(&b)).unwrap();
        assert!(back.theta.abs() < 1e-9);
        assert!((back.w - 1.0).abs() < 1e-9 && (back.h - 2.0).abs() < 1e-9);
        assert!(back.approx_eq(&b, 1e-9));
    }

    #[test]
    fn theta_pi_maps_to_zero() {
        let b = OrientedBox::new(0.0, 0.0, 2.0, 1.0, PI).unwrap();
        assert_eq!(b.theta, 0.0);
    }

    #[test]
    fn rejects_nonpositive_sides() {
        assert!(OrientedBox::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(OrientedBox::new(0.0, 0.0, 1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn square_target() {
        let q = Quad::from_flat([0.0, 0.0, 2.0, 0.0, 2.0, 2.0, 0.0, 2.0]);
        let t = quad_to_point_axis_target(&q, &codec0()).unwrap();
        assert!((t.center.x - 1.0).abs() < 1e-12 && (t.center.y - 1.0).abs() < 1e-12);
        let want = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (v, (x, y)) in t.radials.iter().zip(want) {
            assert!((v.x - x).abs() < 1e-12 && (v.y - y).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn rotated_square_target() {
        let b = OrientedBox::new(1.0, 1.0, 2.0, 2.0, FRAC_PI_4).unwrap();
        let t = quad_to_point_axis_target(&b.to_quad(), &codec0()).unwrap();
        assert!((t.center - Point::new(1.0, 1.0)).norm() < 1e-12);
        let r = FRAC_PI_4.cos();
        assert!((t.radials[0] - Point::new(r, r)).norm() < 1e-9, "{:?}", t.radials);
        assert!((t.radials[1] - Point::new(-r, r)).norm() < 1e-9);
    }

    #[test]
    fn elongated_quad_radial_norms() {
        let q = Quad::from_flat([0.0, 0.0, 4.0, 0.0, 4.0, 1.0, 0.0, 1.0]);
        let t = quad_to_point_axis_target(&q, &codec0()).unwrap();
        let mut norms: Vec<f64> = t.radials.iter().map(|v| v.norm()).collect();
        let want = if norms[0] > norms[1] { [2.0, 0.5, 2.0, 0.5] } else { [0.5, 2.0, 0.5, 2.0] };
        for (n, w) in norms.iter_mut().zip(want) {
            assert!((*n - w).abs() < 1e-12);
        }
        assert!(t.radials_consistent(1e-6));
    }

    #[test]
    fn degenerate_quad() {
        let q = Quad::from_flat([0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        assert!(matches!(quad_to_point_axis_target(&q, &codec0()), Err(GeometryError::DegenerateQuad { .. })));
    }

    #[test]
    fn clip_identity_and_disjoint() {
        let a = sq(0.0, 0.0, 1.0).to_polygon();
        let same = convex_clip(&a, &a);
        assert!((same.area() - 1.0).abs() < 1e-9);
        let far = sq(5.0, 5.0, 1.0).to_polygon();
        assert!(convex_clip(&a, &far).is_empty());
        assert_eq!(convex_clip(&a, &far).area(), 0.0);
    }

    #[test]
    fn offset_squares() {
        let a = sq(0.0, 0.0, 1.0);
        let b = sq(0.5, 0.5, 1.0);
        let inter = convex_clip(&a.to_polygon(), &b.to_polygon());
        assert!((inter.area() - 0.25).abs() < 1e-12);
        assert!(inter.is_convex());
        assert!((rotated_iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn iou_identity_exact() {
        let b = OrientedBox::new(3.3, -1.2, 4.7, 0.9, 1.1).unwrap();
        assert_eq!(rotated_iou(&b, &b), 1.0);
        let far = b.translated(Point::new(100.0, 0.0));
        assert_eq!(rotated_iou(&b, &far), 0.0);
    }

    #[test]
    fn touching_boxes_have_zero_iou() {
        let a = sq(0.0, 0.0, 1.0);
        let b = sq(1.0, 0.0, 1.0);
        assert!(rotated_iou(&a, &b) < 1e-9);
    }

    #[test]
    fn min_area_rect_recovers_box() {
        let b = OrientedBox::new(0.0, 0.0, 2.0, 1.0, 0.3).unwrap();
        let r = min_area_rect(&b.corners()).unwrap();
        assert!(r.approx_eq(&b, 1e-9), "{r:?}");
        assert!((r.theta - 0.3).abs() < 1e-9);
    }

    #[test]
    fn min_area_rect_collinear() {
        let pts = [Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(2.0, 2.0)];
        assert!(matches!(min_area_rect(&pts), Err(GeometryError::DegeneratePointSet(_))));
    }

    #[test]
    fn decode_edge_midpoints() {
        let codec = codec0();
        let pts = [
            Point::new(2.0, 1.0),
            Point::new(1.0, 2.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
        ];
        let logits = axis::encode_axis(0.0, &codec).values;
        let b = decode_point_axis(&pts, &logits, &codec).unwrap();
        assert!(b.approx_eq(&OrientedBox::new(1.0, 1.0, 2.0, 2.0, 0.0).unwrap(), 1e-9));

        let logits45 = axis::encode_axis(FRAC_PI_4, &codec).values;
        let b45 = decode_point_axis(&pts, &logits45, &codec).unwrap();
        let s = 2f64.sqrt();
        let want = OrientedBox::new(1.0, 1.0, s, s, FRAC_PI_4).unwrap();
        assert!(b45.approx_eq(&want, 1e-9), "{b45:?}");
    }

    #[test]
    fn decode_needs_five_points() {
        let pts = [Point::default(); 4];
        assert!(decode_point_axis(&pts, &[], &codec0()).is_err());
    }

    #[test]
    fn bowtie_quad_is_not_simple() {
        let q = Quad::from_flat([0.0, 0.0, 2.0, 2.0, 2.0, 0.0, 0.0, 2.0]);
        assert!(!q.is_simple());
        let ok = Quad::from_flat([0.0, 0.0, 2.0, 0.0, 2.0, 2.0, 0.0, 2.0]);
        assert!(ok.is_simple());
        let cw = Quad::from_flat([0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 2.0, 0.0]);
        assert!(cw.signed_area() < 0.0 && cw.ccw().signed_area() > 0.0);
    }
}
