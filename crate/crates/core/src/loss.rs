//! Point-axis training losses with analytic gradients.
//!
//! Every loss returns a [`LossOutput`]: the scalar value plus the gradient
//! with respect to its differentiable input, flattened in input order
//! (`[x0, y0, x1, y1, ...]` for point sets).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::axis::{AxisCodecConfig, AxisEncoding};
use crate::geometry::{Point, PointAxisTarget};

/// Radial vectors shorter than this make a target unusable.
pub const MIN_RADIAL_NORM: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("degenerate target: radial {index} has norm {norm:e}")]
    DegenerateTarget { index: usize, norm: f64 },
    #[error("need at least 5 predicted points, got {0}")]
    TooFewPoints(usize),
    #[error("top-k with k={k} needs 1 <= k <= {boundary} boundary points")]
    InvalidK { k: usize, boundary: usize },
    #[error("length mismatch: logits {logits}, target {target}")]
    LengthMismatch { logits: usize, target: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("class index {index} out of range for {n_classes} classes")]
    IndexOutOfRange { index: usize, n_classes: usize },
}

/// How the extremal projection per target edge is supervised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionVariant {
    /// Only the single largest projection per edge.
    Max,
    /// `Max` plus the outside distance of every boundary point.
    WithPenalty,
    /// Mean of the `k` largest projections per edge.
    TopK(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub cls_weight: f64,
    pub variant: ProjectionVariant,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub codec: AxisCodecConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 5.0,
            lambda2: 1.0,
            cls_weight: 2.0,
            variant: ProjectionVariant::Max,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            codec: AxisCodecConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_target(target: &PointAxisTarget) -> Result<[(Point, f64); 4], LossError> {
    let mut out = [(Point::default(), 0.0); 4];
    for (j, v) in target.radials.iter().enumerate() {
        let norm = v.norm();
        // NaN norms fail too
        if norm.is_nan() || norm < MIN_RADIAL_NORM {
            return Err(LossError::DegenerateTarget { index: j, norm });
        }
        out[j] = (*v * (1.0 / norm), norm);
    }
    Ok(out)
}

/// Max-projection loss: for each target edge, the absolute signed distance
/// of the farthest predicted boundary point along that edge normal, plus the
/// Euclidean distance between the predicted center (last point) and the
/// target center.
pub fn max_projection_loss(pred: &[Point], target: &PointAxisTarget) -> Result<LossOutput, LossError> {
    max_projection_variant(pred, target, ProjectionVariant::Max)
}

pub fn max_projection_variant(
    pred: &[Point],
    target: &PointAxisTarget,
    variant: ProjectionVariant,
) -> Result<LossOutput, LossError> {
    let k = pred.len();
    if k < 5 {
        return Err(LossError::TooFewPoints(k));
    }
    let dirs = check_target(target)?;
    let boundary = k - 1;
    let top = match variant {
        ProjectionVariant::TopK(t) if t == 0 || t > boundary => return Err(LossError::InvalidK { k: t, boundary }),
        ProjectionVariant::TopK(t) => t,
        _ => 1,
    };

    let rel: Vec<Point> = pred.iter().map(|p| *p - target.center).collect();
    let mut grad = vec![0.0; 2 * k];
    let mut value = 0.0;
    let mut order: Vec<usize> = (0..boundary).collect();
    let mut proj = vec![0.0; boundary];

    let mut terms = [0.0; 4];
    for (j, &(u, norm)) in dirs.iter().enumerate() {
        for (m, p) in proj.iter_mut().enumerate() {
            *p = rel[m].dot(u) - norm;
        }
        // descending projection, lowest index first among equals
        order.sort_by(|&a, &b| proj[b].total_cmp(&proj[a]).then(a.cmp(&b)));
        let mean = order[..top].iter().map(|&m| proj[m]).sum::<f64>() / top as f64;
        terms[j] += mean.abs();
        let s = sign(mean) / top as f64;
        for &m in &order[..top] {
            grad[2 * m] += s * u.x;
            grad[2 * m + 1] += s * u.y;
        }
        if variant == ProjectionVariant::WithPenalty {
            for (m, &p) in proj.iter().enumerate() {
                if p > 0.0 {
                    terms[j] += p;
                    grad[2 * m] += u.x;
                    grad[2 * m + 1] += u.y;
                }
            }
        }
    }

    // opposite edges first, so cyclically relabelled radials sum identically
    value += (terms[0] + terms[2]) + (terms[1] + terms[3]);
    let c = rel[k - 1];
    let dist = c.norm();
    value += dist;
    if dist > 0.0 {
        grad[2 * (k - 1)] += c.x / dist;
        grad[2 * (k - 1) + 1] += c.y / dist;
    }
    Ok(LossOutput { value, grad })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean per-bin binary cross-entropy between `sigmoid(logits)` and the label.
///
/// Probabilities inside each logarithm are floored at `epsilon`; floored
/// terms contribute no gradient.
pub fn cross_axis_loss(
    logits: &[f64],
    target: &AxisEncoding,
    codec: &AxisCodecConfig,
) -> Result<LossOutput, LossError> {
    if logits.len() != target.values.len() {
        return Err(LossError::LengthMismatch { logits: logits.len(), target: target.values.len() });
    }
    if logits.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let n = logits.len() as f64;
    let log_eps = codec.epsilon.ln();
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &a) in logits.iter().zip(&target.values) {
        let p = sigmoid(z);
        let log_p = -softplus(-z);
        let log_q = -softplus(z);
        let mut g = 0.0;
        let lp = if log_p < log_eps {
            log_eps
        } else {
            g -= a * (1.0 - p);
            log_p
        };
        let lq = if log_q < log_eps {
            log_eps
        } else {
            g += (1.0 - a) * p;
            log_q
        };
        value -= a * lp + (1.0 - a) * lq;
        grad.push(g / n);
    }
    Ok(LossOutput { value: value / n, grad })
}

/// Sigmoid focal loss over a `(queries, n_classes)` logit matrix, normalized
/// by the number of non-background targets (at least one).
pub fn classification_loss(
    logits: &[f64],
    n_classes: usize,
    targets: &[Option<usize>],
    alpha: f64,
    gamma: f64,
) -> Result<LossOutput, LossError> {
    if logits.len() != targets.len() * n_classes {
        return Err(LossError::LengthMismatch { logits: logits.len(), target: targets.len() * n_classes });
    }
    let mut n_pos = 0usize;
    for t in targets.iter().flatten() {
        if *t >= n_classes {
            return Err(LossError::IndexOutOfRange { index: *t, n_classes });
        }
        n_pos += 1;
    }
    let norm = n_pos.max(1) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (q, t) in targets.iter().enumerate() {
        for c in 0..n_classes {
            let i = q * n_classes + c;
            let (v, g) = focal_term(logits[i], *t == Some(c), alpha, gamma);
            value += v;
            grad[i] = g / norm;
        }
    }
    Ok(LossOutput { value: value / norm, grad })
}

/// Value and logit-derivative of one focal term.
pub fn focal_term(z: f64, positive: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = sigmoid(z);
    if positive {
        let log_p = -softplus(-z);
        let q = 1.0 - p;
        let qg = q.powf(gamma);
        let v = -alpha * qg * log_p;
        let g = alpha * (gamma * p * qg * log_p - qg * q);
        (v, g)
    } else {
        let log_q = -softplus(z);
        let pg = p.powf(gamma);
        let v = -(1.0 - alpha) * pg * log_q;
        let g = -(1.0 - alpha) * (gamma * pg * (1.0 - p) * log_q - pg * p);
        (v, g)
    }
}

/// Borrowed view of one query's outputs.
#[derive(Debug, Clone, Copy)]
pub struct PredictionRef<'a> {
    pub points: &'a [Point],
    /// Empty when the axis head is disabled.
    pub axis_logits: &'a [f64],
    pub class_logits: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct ClassedTarget {
    pub target: PointAxisTarget,
    pub class: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionGrad {
    pub points: Vec<f64>,
    pub axis_logits: Vec<f64>,
    pub class_logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointAxisLoss {
    pub value: f64,
    /// Mean projection loss over matched instances (unweighted).
    pub proj: f64,
    /// Mean cross-axis loss over matched instances (unweighted).
    pub axis: f64,
    /// Classification loss (unweighted).
    pub cls: f64,
    pub grads: Vec<PredictionGrad>,
}

/// Combined loss over one image's queries: weighted mean of the point and
/// axis terms over matched instances plus the weighted classification term
/// over all queries. `assignment` pairs `(prediction, target)`.
pub fn point_axis_loss(
    preds: &[PredictionRef<'_>],
    targets: &[ClassedTarget],
    assignment: &[(usize, usize)],
    cfg: &LossConfig,
) -> Result<PointAxisLoss, LossError> {
    if targets.is_empty() || assignment.is_empty() || preds.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let n = assignment.len() as f64;
    let mut grads: Vec<PredictionGrad> = preds
        .iter()
        .map(|p| PredictionGrad {
            points: vec![0.0; 2 * p.points.len()],
            axis_logits: vec![0.0; p.axis_logits.len()],
            class_logits: vec![0.0; p.class_logits.len()],
        })
        .collect();
    let (mut proj_sum, mut axis_sum) = (0.0, 0.0);
    let mut class_targets = vec![None; preds.len()];

    for &(pi, ti) in assignment {
        let pred = &preds[pi];
        let tgt = &targets[ti];
        class_targets[pi] = Some(tgt.class);
        let proj = max_projection_variant(pred.points, &tgt.target, cfg.variant)?;
        proj_sum += proj.value;
        for (g, d) in grads[pi].points.iter_mut().zip(&proj.grad) {
            *g += cfg.lambda1 * d / n;
        }
        if !pred.axis_logits.is_empty() {
            let ca = cross_axis_loss(pred.axis_logits, &tgt.target.axis, &cfg.codec)?;
            axis_sum += ca.value;
            for (g, d) in grads[pi].axis_logits.iter_mut().zip(&ca.grad) {
                *g += cfg.lambda2 * d / n;
            }
        }
    }

    let n_classes = preds[0].class_logits.len();
    let flat: Vec<f64> = preds.iter().flat_map(|p| p.class_logits.iter().copied()).collect();
    let cls = classification_loss(&flat, n_classes, &class_targets, cfg.focal_alpha, cfg.focal_gamma)?;
    for (q, g) in grads.iter_mut().enumerate() {
        for (c, slot) in g.class_logits.iter_mut().enumerate() {
            *slot += cfg.cls_weight * cls.grad[q * n_classes + c];
        }
    }
    let proj = proj_sum / n;
    let axis = axis_sum / n;
    Ok(PointAxisLoss {
        value: cfg.lambda1 * proj + cfg.lambda2 * axis + cfg.cls_weight * cls.value,
        proj,
        axis,
        cls: cls.value,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::axis::encode_axis;
    use crate::geometry::{box_to_point_axis_target, OrientedBox};

    fn unit_target() -> PointAxisTarget {
        let b = OrientedBox::new(0.0, 0.0, 2.0, 2.0, 0.0).unwrap();
        box_to_point_axis_target(&b, &AxisCodecConfig::default())
    }

    fn midpoints_and_center(center: Point) -> Vec<Point> {
        vec![Point::new(1.0, 0.0), Point::new(0.0, 1.0), Point::new(-1.0, 0.0), Point::new(0.0, -1.0), center]
    }

    #[test]
    fn zero_on_edge_midpoints() {
        let out = max_projection_loss(&midpoints_and_center(Point::default()), &unit_target()).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn all_points_at_center() {
        let pts = vec![Point::default(); 9];
        let out = max_projection_loss(&pts, &unit_target()).unwrap();
        assert!((out.value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn center_offset_only() {
        let out = max_projection_loss(&midpoints_and_center(Point::new(0.3, 0.4)), &unit_target()).unwrap();
        assert!((out.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn penalty_empty_when_inside() {
        let pts = vec![
            Point::new(1.0, 0.2),
            Point::new(0.3, 1.0),
            Point::new(-1.0, 0.0),
            Point::new(0.0, -1.0),
            Point::new(0.5, 0.5),
            Point::new(0.1, 0.1),
        ];
        let t = unit_target();
        let a = max_projection_loss(&pts, &t).unwrap();
        let b = max_projection_variant(&pts, &t, ProjectionVariant::WithPenalty).unwrap();
        assert_eq!(a, b);
        let c = max_projection_variant(&pts, &t, ProjectionVariant::TopK(1)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn penalty_counts_outside_points() {
        let mut pts = midpoints_and_center(Point::default());
        pts.insert(0, Point::new(1.5, 0.0));
        let plain = max_projection_loss(&pts, &unit_target()).unwrap();
        let pen = max_projection_variant(&pts, &unit_target(), ProjectionVariant::WithPenalty).unwrap();
        assert!((plain.value - 0.5).abs() < 1e-12);
        assert!((pen.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top2_mean() {
        // two points per direction at projections 0 and -0.2
        let mut pts = Vec::new();
        for u in [Point::new(1.0, 0.0), Point::new(0.0, 1.0), Point::new(-1.0, 0.0), Point::new(0.0, -1.0)] {
            pts.push(u);
            pts.push(u * 0.8);
        }
        pts.push(Point::default());
        let out = max_projection_variant(&pts, &unit_target(), ProjectionVariant::TopK(2)).unwrap();
        assert!((out.value - 0.4).abs() < 1e-12, "{}", out.value);
    }

    #[test]
    fn invalid_k_and_degenerate() {
        let pts = vec![Point::default(); 5];
        assert!(matches!(
            max_projection_variant(&pts, &unit_target(), ProjectionVariant::TopK(5)),
            Err(LossError::InvalidK { .. })
        ));
        let mut t = unit_target();
        t.radials[1] = Point::default();
        assert!(matches!(max_projection_loss(&pts, &t), Err(LossError::DegenerateTarget { index: 1, .. })));
        assert!(matches!(max_projection_loss(&pts[..4], &unit_target()), Err(LossError::TooFewPoints(4))));
    }

    #[test]
    fn cross_axis_examples() {
        let codec = AxisCodecConfig { sigma: 0.0, ..Default::default() };
        let target = encode_axis(0.0, &codec);
        let logits: Vec<f64> = target.values.iter().map(|&a| if a == 1.0 { 20.0 } else { -20.0 }).collect();
        assert!(cross_axis_loss(&logits, &target, &codec).unwrap().value <= 1e-7);

        let zeros = vec![0.0; 360];
        let v = cross_axis_loss(&zeros, &encode_axis(0.7, &AxisCodecConfig::default()), &codec).unwrap();
        assert!((v.value - std::f64::consts::LN_2).abs() < 1e-12);

        let c = AxisCodecConfig::default();
        let l0 = cross_axis_loss(&logits, &encode_axis(0.0, &c), &c).unwrap();
        let l360 = cross_axis_loss(&logits, &encode_axis(std::f64::consts::TAU, &c), &c).unwrap();
        assert_eq!(l0, l360);

        assert!(matches!(cross_axis_loss(&[0.0; 4], &target, &codec), Err(LossError::LengthMismatch { .. })));
    }

    #[test]
    fn focal_examples() {
        let out = classification_loss(&[0.0], 1, &[Some(0)], 0.25, 2.0).unwrap();
        assert!((out.value - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((out.value - 0.043322).abs() < 1e-6);
        let bce = classification_loss(&[0.0], 1, &[Some(0)], 1.0, 0.0).unwrap();
        assert!((bce.value - std::f64::consts::LN_2).abs() < 1e-12);
        let sat = classification_loss(&[30.0, -30.0], 2, &[Some(0)], 0.25, 2.0).unwrap();
        assert!(sat.value < 1e-12);
        assert!(matches!(
            classification_loss(&[0.0, 0.0], 2, &[Some(2)], 0.25, 2.0),
            Err(LossError::IndexOutOfRange { index: 2, n_classes: 2 })
        ));
    }

    #[test]
    fn combined_mean_of_instances() {
        let codec = AxisCodecConfig { sigma: 0.0, ..Default::default() };
        let cfg = LossConfig { lambda1: 1.0, lambda2: 1.0, cls_weight: 0.0, codec, ..Default::default() };
        let t = box_to_point_axis_target(&OrientedBox::new(0.0, 0.0, 2.0, 2.0, 0.0).unwrap(), &codec);
        let a_pts = vec![Point::default(); 5];
        let b_pts = midpoints_and_center(Point::new(0.3, 0.4));
        let axis = vec![0.0; 360];
        let cls = [0.0];
        let preds = [
            PredictionRef { points: &a_pts, axis_logits: &axis, class_logits: &cls },
            PredictionRef { points: &b_pts, axis_logits: &axis, class_logits: &cls },
        ];
        let targets = vec![ClassedTarget { target: t.clone(), class: 0 }, ClassedTarget { target: t, class: 0 }];
        let out = point_axis_loss(&preds, &targets, &[(0, 0), (1, 1)], &cfg).unwrap();
        let a = 4.0 + std::f64::consts::LN_2;
        let b = 0.5 + std::f64::consts::LN_2;
        assert!((out.value - (a + b) / 2.0).abs() < 1e-12);
        assert!(matches!(point_axis_loss(&preds, &targets, &[], &cfg), Err(LossError::EmptyBatch)));
    }
}
