//! Rotated-box average precision (VOC 2007 / VOC 2012 / COCO 101-point).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{quad_to_obb, rotated_iou, GeometryError, OrientedBox, Quad};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown AP protocol {0:?} (expected voc07, voc12 or coco101)")]
    UnknownProtocol(String),
    #[error("detection dump line {line}: {reason}")]
    DumpFormat { line: usize, reason: String },
    #[error("detection dump line {line}: {source}")]
    DumpGeometry { line: usize, source: GeometryError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApProtocol {
    Voc07,
    Voc12,
    Coco101,
}

impl FromStr for ApProtocol {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "voc07" => Ok(Self::Voc07),
            "voc12" => Ok(Self::Voc12),
            "coco101" => Ok(Self::Coco101),
            _ => Err(EvalError::UnknownProtocol(s.to_string())),
        }
    }
}

impl fmt::Display for ApProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Voc07 => "voc07",
            Self::Voc12 => "voc12",
            Self::Coco101 => "coco101",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class: String,
    pub score: f64,
    pub bbox: OrientedBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub image_id: String,
    pub class: String,
    pub bbox: OrientedBox,
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub ap: f64,
    pub n_gt: usize,
    pub n_det: usize,
    pub n_tp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub protocol: ApProtocol,
    pub iou_threshold: f64,
    pub per_class: BTreeMap<String, ClassAp>,
    /// Mean over classes with at least one non-difficult ground-truth instance.
    pub map: f64,
}

impl ApReport {
    /// `mAP50`, `mAP75`, ... for the report's IoU threshold.
    pub fn metric_name(&self) -> String {
        format!("mAP{}", (self.iou_threshold * 100.0).round() as i64)
    }

    /// Fixed-width per-class table followed by the mean.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<16} {:>8} {:>6} {:>6} {:>6}\n", "class", "AP", "n_gt", "n_det", "n_tp");
        for (class, c) in &self.per_class {
            out += &format!("{class:<16} {:>8.4} {:>6} {:>6} {:>6}\n", c.ap, c.n_gt, c.n_det, c.n_tp);
        }
        out +=
            &format!("{:<16} {:>8.4}  ({}, iou {})\n", self.metric_name(), self.map, self.protocol, self.iou_threshold);
        out
    }

    /// The report as JSON with the mean repeated under [`Self::metric_name`].
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v[self.metric_name()] = serde_json::json!(self.map);
        v
    }
}

/// Greedy VOC-style evaluation: detections in descending score order take
/// the best-overlapping ground truth of their image and class; a detection
/// whose best match is already taken is a false positive, one whose best
/// match is difficult is ignored.
pub fn average_precision(
    detections: &[DetectionRecord],
    ground_truth: &[GroundTruthRecord],
    iou_threshold: f64,
    protocol: ApProtocol,
) -> ApReport {
    let mut classes: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, g) in ground_truth.iter().enumerate() {
        classes.entry(&g.class).or_default().0.push(i);
    }
    for (i, d) in detections.iter().enumerate() {
        classes.entry(&d.class).or_default().1.push(i);
    }

    let mut per_class = BTreeMap::new();
    for (class, (gt_idx, det_idx)) in classes {
        let n_gt = gt_idx.iter().filter(|&&i| !ground_truth[i].difficult).count();
        if n_gt == 0 {
            continue;
        }
        let mut by_image: HashMap<&str, Vec<(usize, bool)>> = HashMap::new();
        for &i in &gt_idx {
            by_image.entry(&ground_truth[i].image_id).or_default().push((i, false));
        }
        let mut order = det_idx.clone();
        order.sort_by(|&a, &b| {
            let (da, db) = (&detections[a], &detections[b]);
            db.score.total_cmp(&da.score).then_with(|| da.image_id.cmp(&db.image_id)).then(a.cmp(&b))
        });

        let mut tp_flags = Vec::with_capacity(order.len());
        for &di in &order {
            let det = &detections[di];
            let Some(gts) = by_image.get_mut(det.image_id.as_str()) else {
                tp_flags.push(false);
                continue;
            };
            let mut best: Option<(usize, f64)> = None;
            for (k, (gi, _)) in gts.iter().enumerate() {
                let iou = rotated_iou(&det.bbox, &ground_truth[*gi].bbox);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((k, iou));
                }
            }
            match best {
                Some((k, iou)) if iou >= iou_threshold => {
                    let (gi, taken) = &mut gts[k];
                    if ground_truth[*gi].difficult {
                        continue;
                    }
                    if *taken {
                        tp_flags.push(false);
                    } else {
                        *taken = true;
                        tp_flags.push(true);
                    }
                }
                _ => tp_flags.push(false),
            }
        }

        let (mut tp, mut fp) = (0usize, 0usize);
        let mut recall = Vec::with_capacity(tp_flags.len());
        let mut precision = Vec::with_capacity(tp_flags.len());
        for &hit in &tp_flags {
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            recall.push(tp as f64 / n_gt as f64);
            precision.push(tp as f64 / (tp + fp) as f64);
        }
        let ap = curve_ap(&recall, &precision, protocol);
        per_class.insert(class.to_string(), ClassAp { ap, n_gt, n_det: det_idx.len(), n_tp: tp });
    }

    let map =
        if per_class.is_empty() { 0.0 } else { per_class.values().map(|c| c.ap).sum::<f64>() / per_class.len() as f64 };
    ApReport { protocol, iou_threshold, per_class, map }
}

/// Area under a precision-recall curve under the given interpolation rule.
pub fn curve_ap(recall: &[f64], precision: &[f64], protocol: ApProtocol) -> f64 {
    if recall.is_empty() {
        return 0.0;
    }
    match protocol {
        ApProtocol::Voc07 => {
            let mut ap = 0.0;
            for t in 0..=10 {
                let t = t as f64 / 10.0;
                let p = recall.iter().zip(precision).filter(|(r, _)| **r >= t).map(|(_, p)| *p).fold(0.0, f64::max);
                ap += p;
            }
            ap / 11.0
        }
        ApProtocol::Voc12 => {
            let mut mrec = Vec::with_capacity(recall.len() + 2);
            mrec.push(0.0);
            mrec.extend_from_slice(recall);
            mrec.push(1.0);
            let mut mpre = Vec::with_capacity(precision.len() + 2);
            mpre.push(0.0);
            mpre.extend_from_slice(precision);
            mpre.push(0.0);
            for i in (1..mpre.len()).rev() {
                mpre[i - 1] = mpre[i - 1].max(mpre[i]);
            }
            (0..mrec.len() - 1).filter(|&i| mrec[i + 1] != mrec[i]).map(|i| (mrec[i + 1] - mrec[i]) * mpre[i + 1]).sum()
        }
        ApProtocol::Coco101 => {
            let mut envelope = precision.to_vec();
            for i in (1..envelope.len()).rev() {
                envelope[i - 1] = envelope[i - 1].max(envelope[i]);
            }
            let mut total = 0.0;
            for t in 0..=100 {
                let t = t as f64 / 100.0;
                let idx = recall.partition_point(|&r| r < t);
                if idx < envelope.len() {
                    total += envelope[idx];
                }
            }
            total / 101.0
        }
    }
}

/// Writes detections as `image_id class score x1 y1 x2 y2 x3 y3 x4 y4` lines.
pub fn write_detections<W: Write>(mut out: W, dets: &[DetectionRecord]) -> std::io::Result<()> {
    for d in dets {
        write!(out, "{} {} {}", d.image_id, d.class, d.score)?;
        for v in d.bbox.to_quad().to_flat() {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a detection dump. Boxes are the minimum-area rectangles of the quads.
pub fn read_detections<R: BufRead>(input: R) -> Result<Vec<DetectionRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 11 {
            return Err(EvalError::DumpFormat {
                line: lineno,
                reason: format!("expected 11 fields, got {}", toks.len()),
            });
        }
        let num = |t: &str| -> Result<f64, EvalError> {
            t.parse::<f64>().map_err(|_| EvalError::DumpFormat { line: lineno, reason: format!("not a number: {t:?}") })
        };
        let score = num(toks[2])?;
        let mut flat = [0.0; 8];
        for (k, slot) in flat.iter_mut().enumerate() {
            *slot = num(toks[3 + k])?;
        }
        let bbox =
            quad_to_obb(&Quad::from_flat(flat)).map_err(|source| EvalError::DumpGeometry { line: lineno, source })?;
        out.push(DetectionRecord { image_id: toks[0].to_string(), class: toks[1].to_string(), score, bbox });
    }
    Ok(out)
}
