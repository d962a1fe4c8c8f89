//! Orientation as a circular four-peak soft label over direction bins.
//!
//! Bin `b` is centered at `b * 360 / n_bins` degrees. An object with axis
//! direction `theta` gets Gaussian peaks at `theta`, `theta + 90°`,
//! `theta + 180°` and `theta + 270°`, so the label does not depend on which
//! of the two rectangle axes is called "first" and is identical at 0° and 360°.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AxisError {
    #[error("axis logits contain a non-finite value at bin {0}")]
    NonFiniteLogits(usize),
    #[error("axis vector is empty")]
    Empty,
    #[error("invalid axis codec config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisCodecConfig {
    pub n_bins: usize,
    /// Gaussian standard deviation, in bins. Zero gives one-hot peaks.
    pub sigma: f64,
    /// Floor applied to probabilities inside logarithms.
    pub epsilon: f64,
}

impl Default for AxisCodecConfig {
    fn default() -> Self {
        Self { n_bins: 360, sigma: 6.0, epsilon: 1e-7 }
    }
}

impl AxisCodecConfig {
    pub fn validate(&self) -> Result<(), AxisError> {
        if self.n_bins < 8 || self.n_bins % 4 != 0 {
            return Err(AxisError::InvalidConfig(format!(
                "n_bins must be >= 8 and divisible by 4, got {}",
                self.n_bins
            )));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(AxisError::InvalidConfig(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(AxisError::InvalidConfig(format!("epsilon must be in (0, 0.5), got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        TAU / self.n_bins as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisEncoding {
    pub values: Vec<f64>,
}

impl AxisEncoding {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Circular shift so that `out[(b + k) % n] == self[b]`.
    pub fn shifted(&self, k: usize) -> AxisEncoding {
        let n = self.values.len();
        let mut out = vec![0.0; n];
        for (b, &v) in self.values.iter().enumerate() {
            out[(b + k) % n] = v;
        }
        AxisEncoding { values: out }
    }
}

/// Encodes direction `theta` (radians) as a four-peak label.
pub fn encode_axis(theta: f64, cfg: &AxisCodecConfig) -> AxisEncoding {
    let n = cfg.n_bins;
    let quarter = n / 4;
    let qf = quarter as f64;
    let theta = if theta.is_finite() { theta } else { 0.0 };
    // peak position inside the first quadrant, snapped to 1e-9 bins so that
    // theta and theta + 90° land on the same value
    let mut peak = (theta.to_degrees() * n as f64 / 360.0).rem_euclid(qf);
    peak = (peak * 1e9).round() / 1e9;
    if peak >= qf {
        peak -= qf;
    }
    let mut quadrant = vec![0.0; quarter];
    if cfg.sigma == 0.0 {
        quadrant[(peak.round() as usize) % quarter] = 1.0;
    } else {
        let denom = 2.0 * cfg.sigma * cfg.sigma;
        for (r, slot) in quadrant.iter_mut().enumerate() {
            let d = (r as f64 - peak).abs();
            let d = d.min(qf - d);
            *slot = (-d * d / denom).exp();
        }
    }
    AxisEncoding { values: (0..n).map(|b| quadrant[b % quarter]).collect() }
}

/// Label used when object axes are fixed to the image axes.
pub fn encode_fixed_horizontal(cfg: &AxisCodecConfig) -> AxisEncoding {
    encode_axis(0.0, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisDecode {
    pub bin: usize,
    /// Center of the arg-max bin, radians in `[0, 2pi)`.
    pub principal: f64,
    /// The principal direction folded into `[0, pi/2)`.
    pub principal_reduced: f64,
    /// Principal direction plus 0°, 90°, 180°, 270°, each in `[0, 2pi)`.
    pub directions: [f64; 4],
}

/// Arg-max decoding of an encoding or of raw logits. Ties go to the lowest bin.
pub fn decode_axis(values: &[f64]) -> Result<AxisDecode, AxisError> {
    if values.is_empty() {
        return Err(AxisError::Empty);
    }
    let mut bin = 0;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(AxisError::NonFiniteLogits(i));
        }
        if v > values[bin] {
            bin = i;
        }
    }
    let n = values.len();
    let width = TAU / n as f64;
    let quarter = (n / 4).max(1);
    let directions = [0, 1, 2, 3].map(|k| ((bin + k * quarter) % n) as f64 * width);
    Ok(AxisDecode { bin, principal: bin as f64 * width, principal_reduced: (bin % quarter) as f64 * width, directions })
}
