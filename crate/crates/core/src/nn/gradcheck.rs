//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, NnError, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale.
pub const SCALE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(flat index, analytic, numeric)` of the worst relative error.
    pub worst: Option<(usize, f64, f64)>,
    /// Coordinates left out because a kink lies within the probe step.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }

    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let worst = if other.max_rel_err > self.max_rel_err { other.worst } else { self.worst };
        GradCheckReport {
            checked: self.checked + other.checked,
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            max_abs_err: self.max_abs_err.max(other.max_abs_err),
            worst,
            skipped: self.skipped + other.skipped,
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

/// Central differences of a scalar function.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn compare(analytic: &[f64], numeric: &[f64]) -> GradCheckReport {
    let mut report = GradCheckReport { checked: analytic.len(), ..Default::default() };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = rel_err(a, n);
        report.max_abs_err = report.max_abs_err.max((a - n).abs());
        if rel > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst = Some((i, a, n));
        }
    }
    report
}

/// Checks every differentiable input of a graph-building function. The
/// output is reduced to a scalar through fixed pseudo-random weights.
pub fn check_graph_fn<F>(inputs: &[Tensor], f: F, seed: u64) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NnError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..g.value(out).len())
        .map(|_| {
            let m: f64 = rng.gen_range(0.5..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let grads = g.backward(&[(out, weights.clone())]);

    let eval = |ins: &[Tensor]| -> Result<f64, NnError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data().iter().zip(&weights).map(|(a, b)| a * b).sum())
    };

    let mut report = GradCheckReport::default();
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&g, *var);
        let mut numeric = vec![0.0; analytic.len()];
        for (i, num) in numeric.iter_mut().enumerate() {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + DEFAULT_STEP;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - DEFAULT_STEP;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            *num = (up - down) / (2.0 * DEFAULT_STEP);
        }
        report = report.merge(compare(&analytic, &numeric));
    }
    Ok(report)
}
