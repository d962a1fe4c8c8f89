//! Bipartite set matching between predictions and ground truth.

use thiserror::Error;

use crate::loss::{
    cross_axis_loss, max_projection_variant, sigmoid, ClassedTarget, LossConfig, LossError, PredictionRef,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("non-finite cost at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },
    #[error("cost matrix rows have unequal lengths")]
    Ragged,
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Dense row-major cost matrix; rows are predictions, columns targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "cost matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatchingError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MatchingError::Ragged);
        }
        Ok(Self::new(rows.len(), cols, rows.concat()))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn total(&self, assignment: &[(usize, usize)]) -> f64 {
        assignment.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

/// Minimum-cost assignment of `min(rows, cols)` pairs, sorted by row index.
///
/// Shortest augmenting path with potentials, O(n^2 m).
pub fn hungarian(costs: &CostMatrix) -> Result<Vec<(usize, usize)>, MatchingError> {
    for r in 0..costs.rows {
        for c in 0..costs.cols {
            if !costs.get(r, c).is_finite() {
                return Err(MatchingError::NonFiniteCost { row: r, col: c });
            }
        }
    }
    if costs.rows == 0 || costs.cols == 0 {
        return Ok(Vec::new());
    }
    let transposed = costs.rows > costs.cols;
    let (n, m) = if transposed { (costs.cols, costs.rows) } else { (costs.rows, costs.cols) };
    let at = |i: usize, j: usize| if transposed { costs.get(j, i) } else { costs.get(i, j) };

    // 1-based arrays; column 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| if transposed { (j - 1, owner[j] - 1) } else { (owner[j] - 1, j - 1) })
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Matching cost of one prediction against one target: the weighted
/// projection and axis losses minus the weighted target-class probability.
pub fn matching_cost(pred: &PredictionRef<'_>, target: &ClassedTarget, cfg: &LossConfig) -> Result<f64, LossError> {
    let proj = max_projection_variant(pred.points, &target.target, cfg.variant)?.value;
    let axis = if pred.axis_logits.is_empty() {
        0.0
    } else {
        cross_axis_loss(pred.axis_logits, &target.target.axis, &cfg.codec)?.value
    };
    let score = pred
        .class_logits
        .get(target.class)
        .map(|&z| sigmoid(z))
        .ok_or(LossError::IndexOutOfRange { index: target.class, n_classes: pred.class_logits.len() })?;
    Ok(cfg.lambda1 * proj + cfg.lambda2 * axis - cfg.cls_weight * score)
}

pub fn cost_matrix(
    preds: &[PredictionRef<'_>],
    targets: &[ClassedTarget],
    cfg: &LossConfig,
) -> Result<CostMatrix, LossError> {
    let mut data = Vec::with_capacity(preds.len() * targets.len());
    for p in preds {
        for t in targets {
            data.push(matching_cost(p, t, cfg)?);
        }
    }
    Ok(CostMatrix::new(preds.len(), targets.len(), data))
}

/// Builds the cost matrix and solves it.
pub fn match_predictions(
    preds: &[PredictionRef<'_>],
    targets: &[ClassedTarget],
    cfg: &LossConfig,
) -> Result<Vec<(usize, usize)>, MatchingError> {
    let costs = cost_matrix(preds, targets, cfg)?;
    hungarian(&costs)
}
