//! Oracle suites behind `paxkit verify`: finite-difference gradient checks,
//! Monte-Carlo IoU, brute-force rectangles, permutation Hungarian and codec
//! roundtrips.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::axis::{decode_axis, encode_axis, AxisCodecConfig};
use crate::data::{generate_scene, Image, Scene, SynthParams};
use crate::geometry::{
    angle_diff, box_to_point_axis_target, min_area_rect, rotated_iou, OrientedBox, Point, PointAxisTarget,
};
use crate::loss::{
    classification_loss, cross_axis_loss, max_projection_variant, point_axis_loss, ClassedTarget, LossConfig,
    PredictionRef, ProjectionVariant,
};
use crate::matching::{hungarian, CostMatrix};
use crate::model::{ModelConfig, OrientedDetr};
use crate::nn::gradcheck::{check_graph_fn, rel_err, GradCheckReport, DEFAULT_STEP};
use crate::nn::{
    AttentionConfig, DeformableAttention, FeedForward, Graph, LayerNorm, Linear, Mlp, MultiHeadAttention, NnError,
    ParamStore, Tensor, Var,
};
use crate::train::{evaluate_loss_replaying, loss_grads_detached, prepare_sample, TrainLossConfig};

/// Relative error bound for losses, ops and blocks.
pub const GRAD_TOL: f64 = 1e-4;
/// Relative error bound for the end-to-end micro model.
pub const MODEL_GRAD_TOL: f64 = 1e-3;
/// Absolute IoU agreement with the Monte-Carlo oracle.
pub const IOU_MC_TOL: f64 = 1e-3;
pub const IOU_FIXTURE_TOL: f64 = 1e-9;
/// Relative area agreement with the brute-force rectangle.
pub const RECT_AREA_TOL: f64 = 1e-9;
pub const MATCH_TOL: f64 = 1e-9;
/// Largest share of probed coordinates that may be skipped as kinks.
pub const MAX_KINK_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Grad,
    Geom,
    Codec,
    Match,
    All,
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "grad" => Ok(Suite::Grad),
            "geom" => Ok(Suite::Geom),
            "codec" => Ok(Suite::Codec),
            "match" => Ok(Suite::Match),
            "all" => Ok(Suite::All),
            other => Err(format!("unknown suite {other:?} (expected grad, geom, codec, match or all)")),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Grad => "grad",
            Suite::Geom => "geom",
            Suite::Codec => "codec",
            Suite::Match => "match",
            Suite::All => "all",
        })
    }
}

/// Sizes of the randomized checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Seeded configurations per gradient check.
    pub grad_configs: usize,
    pub iou_pairs: usize,
    /// Monte-Carlo samples per pair, drawn on a jittered square grid.
    pub iou_samples: usize,
    pub rect_sets: usize,
    pub match_matrices: usize,
    pub match_max_size: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            grad_configs: 100,
            iou_pairs: 1000,
            iou_samples: 1_000_000,
            rect_sets: 500,
            match_matrices: 1000,
            match_max_size: 7,
        }
    }
}

impl VerifyOptions {
    /// Reduced sizes for smoke runs.
    pub fn quick() -> Self {
        Self {
            grad_configs: 4,
            iou_pairs: 20,
            iou_samples: 90_000,
            rect_sets: 50,
            match_matrices: 100,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed error of the check's metric.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<32} worst {:.3e} (tol {})  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.detail
        )
    }
}

fn check(name: impl Into<String>, worst: f64, tolerance: f64, detail: String) -> CheckResult {
    CheckResult { name: name.into(), passed: worst <= tolerance, worst, tolerance, detail }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<CheckResult>,
    pub elapsed_ms: u128,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub fn run(suite: Suite, opts: &VerifyOptions) -> Vec<SuiteReport> {
    match suite {
        Suite::Grad => vec![grad_suite(opts)],
        Suite::Geom => vec![geom_suite(opts)],
        Suite::Codec => vec![codec_suite(opts)],
        Suite::Match => vec![match_suite(opts)],
        Suite::All => vec![grad_suite(opts), geom_suite(opts), codec_suite(opts), match_suite(opts)],
    }
}

fn timed(suite: Suite, f: impl FnOnce() -> Vec<CheckResult>) -> SuiteReport {
    let t = std::time::Instant::now();
    let checks = f();
    SuiteReport { suite, checks, elapsed_ms: t.elapsed().as_millis() }
}

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// ---------------------------------------------------------------- gradients

type CaseFn = dyn Fn(&mut ChaCha8Rng, u64) -> Result<GradCheckReport, String>;

/// One gradient check, run once per seeded configuration.
pub struct GradCase {
    pub name: String,
    pub tolerance: f64,
    run: Box<CaseFn>,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        tolerance: f64,
        run: impl Fn(&mut ChaCha8Rng, u64) -> Result<GradCheckReport, String> + 'static,
    ) -> Self {
        Self { name: name.into(), tolerance, run: Box::new(run) }
    }

    /// Checks a graph function with respect to every leaf input.
    pub fn graph(
        name: impl Into<String>,
        inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> + 'static,
        build: impl Fn(&mut Graph, &[Var]) -> Result<Var, NnError> + Clone + 'static,
    ) -> Self {
        Self::new(name, GRAD_TOL, move |rng, seed| {
            let ins = inputs(rng);
            check_graph_fn(&ins, build.clone(), seed).map_err(|e| e.to_string())
        })
    }
}

/// Central differences over the selected coordinates with kink screening.
///
/// A coordinate whose central difference misses the tolerance is skipped
/// when the analytic value lies between the forward and backward one-sided
/// slopes: a kink inside the probe interval, with the analytic gradient on
/// one side of it. A wrong gradient in a smooth region falls outside that
/// interval, whose width is only `h * f''`.
fn probe<F>(analytic: &[f64], coords: &[usize], tol: f64, mut f: F) -> Result<GradCheckReport, String>
where
    F: FnMut(Option<(usize, f64)>) -> Result<f64, String>,
{
    let h = DEFAULT_STEP;
    let base = f(None)?;
    let mut report = GradCheckReport::default();
    for &i in coords {
        let up = f(Some((i, h)))?;
        let down = f(Some((i, -h)))?;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = rel_err(a, numeric);
        if rel > tol {
            let (fwd, bwd) = ((up - base) / h, (base - down) / h);
            let (lo, hi) = (fwd.min(bwd), fwd.max(bwd));
            let slack = 0.01 * (hi - lo);
            if a >= lo - slack && a <= hi + slack {
                report.skipped += 1;
                continue;
            }
        }
        report.checked += 1;
        report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        if rel > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst = Some((i, a, numeric));
        }
    }
    Ok(report)
}

/// Checks a plain `f(x) -> (value, gradient)` at `x`.
fn check_flat<F>(x: &[f64], tol: f64, f: F) -> Result<GradCheckReport, String>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>), String>,
{
    let (_, analytic) = f(x)?;
    let coords: Vec<usize> = (0..x.len()).collect();
    let mut p = x.to_vec();
    probe(&analytic, &coords, tol, |d| {
        if let Some((i, h)) = d {
            p[i] = x[i] + h;
            let v = f(&p).map(|r| r.0);
            p[i] = x[i];
            v
        } else {
            f(x).map(|r| r.0)
        }
    })
}

/// Anything that owns a parameter store and can be perturbed through it.
trait StoreOwner: Clone {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
}

impl StoreOwner for OrientedDetr {
    fn store(&self) -> &ParamStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

#[derive(Clone)]
struct Block<L: Clone> {
    layer: L,
    store: ParamStore,
}

impl<L: Clone> StoreOwner for Block<L> {
    fn store(&self) -> &ParamStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

/// Flat coordinate `(tensor, index)` table over a store.
fn flat_index(store: &ParamStore) -> Vec<(usize, usize)> {
    store.iter().enumerate().flat_map(|(t, (_, p))| (0..p.value.len()).map(move |i| (t, i))).collect()
}

/// Random flat coordinates, at most `per_tensor` from each tensor in `tensors`.
fn pick_coords(rng: &mut ChaCha8Rng, store: &ParamStore, tensors: &[usize], per_tensor: usize) -> Vec<usize> {
    let mut offset = 0;
    let mut out = Vec::new();
    for (t, (_, p)) in store.iter().enumerate() {
        let n = p.value.len();
        if tensors.contains(&t) {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            out.extend(idx.into_iter().take(per_tensor).map(|i| offset + i));
        }
        offset += n;
    }
    out
}

fn perturbed<S: StoreOwner>(subject: &S, table: &[(usize, usize)], d: Option<(usize, f64)>) -> S {
    let mut s = subject.clone();
    if let Some((flat, h)) = d {
        let (t, i) = table[flat];
        let id = s.store().ids().nth(t).expect("tensor index");
        s.store_mut().value_mut(id).data_mut()[i] += h;
    }
    s
}

/// Checks the parameters bound by `forward`, reducing its outputs to a
/// scalar through random weights of magnitude 0.5 to 1.5.
fn check_store_fn<S, F>(
    subject: &S,
    rng: &mut ChaCha8Rng,
    per_tensor: usize,
    tol: f64,
    forward: F,
) -> Result<GradCheckReport, String>
where
    S: StoreOwner,
    F: Fn(&S, &mut Graph) -> Result<Vec<Var>, String>,
{
    let mut g = Graph::new();
    let outs = forward(subject, &mut g)?;
    let weights: Vec<Vec<f64>> = outs
        .iter()
        .map(|&o| {
            (0..g.value(o).len())
                .map(|_| rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    let seeds: Vec<(Var, Vec<f64>)> = outs.iter().copied().zip(weights.iter().cloned()).collect();
    let grads = g.backward(&seeds);
    let detached = g.detached_values().to_vec();

    let store = subject.store();
    let table = flat_index(store);
    let ids: Vec<_> = store.ids().collect();
    let mut offsets = Vec::with_capacity(ids.len());
    let mut acc = 0;
    for (_, p) in store.iter() {
        offsets.push(acc);
        acc += p.value.len();
    }
    let mut analytic = vec![0.0; table.len()];
    let mut bound = Vec::new();
    for &(id, v) in g.bound_params() {
        let t = ids.iter().position(|i| *i == id).expect("bound parameter belongs to the store");
        bound.push(t);
        if let Some(gr) = grads.get(v) {
            analytic[offsets[t]..offsets[t] + gr.len()].copy_from_slice(gr);
        }
    }
    let coords = pick_coords(rng, store, &bound, per_tensor);
    probe(&analytic, &coords, tol, |d| {
        let s = perturbed(subject, &table, d);
        let mut g = Graph::replaying(detached.clone());
        let outs = forward(&s, &mut g)?;
        Ok(outs
            .iter()
            .zip(&weights)
            .map(|(&o, w)| g.value(o).data().iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .sum())
    })
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

fn random_box(rng: &mut ChaCha8Rng, span: f64) -> OrientedBox {
    OrientedBox::new(
        rng.gen_range(-span..span),
        rng.gen_range(-span..span),
        rng.gen_range(0.3..2.0),
        rng.gen_range(0.3..2.0),
        rng.gen_range(0.0..PI),
    )
    .expect("valid box")
}

fn points_of(x: &[f64]) -> Vec<Point> {
    x.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect()
}

fn projection_case(name: &str, variant: ProjectionVariant) -> GradCase {
    GradCase::new(name, GRAD_TOL, move |rng, _| {
        let k = rng.gen_range(5..=13);
        let target = box_to_point_axis_target(&random_box(rng, 0.5), &AxisCodecConfig::default());
        let x: Vec<f64> = (0..2 * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        check_flat(&x, GRAD_TOL, |x| {
            let out = max_projection_variant(&points_of(x), &target, variant).map_err(|e| e.to_string())?;
            Ok((out.value, out.grad))
        })
    })
}

fn loss_cases() -> Vec<GradCase> {
    let mut cases = vec![
        projection_case("loss/max_projection", ProjectionVariant::Max),
        projection_case("loss/max_projection_penalty", ProjectionVariant::WithPenalty),
        projection_case("loss/max_projection_top2", ProjectionVariant::TopK(2)),
        projection_case("loss/max_projection_top3", ProjectionVariant::TopK(3)),
    ];
    cases.push(GradCase::new("loss/cross_axis", GRAD_TOL, |rng, _| {
        let bins = [8, 16, 72, 360][rng.gen_range(0..4)];
        let codec = AxisCodecConfig { n_bins: bins, sigma: rng.gen_range(0.0..4.0), ..Default::default() };
        let target = encode_axis(rng.gen_range(0.0..TAU), &codec);
        let x: Vec<f64> = (0..bins).map(|_| rng.gen_range(-5.0..5.0)).collect();
        check_flat(&x, GRAD_TOL, |x| {
            let out = cross_axis_loss(x, &target, &codec).map_err(|e| e.to_string())?;
            Ok((out.value, out.grad))
        })
    }));
    cases.push(GradCase::new("loss/focal_classification", GRAD_TOL, |rng, _| {
        let (q, c) = (rng.gen_range(1..6), rng.gen_range(1..4));
        let targets: Vec<Option<usize>> =
            (0..q).map(|_| if rng.gen_bool(0.5) { Some(rng.gen_range(0..c)) } else { None }).collect();
        let x: Vec<f64> = (0..q * c).map(|_| rng.gen_range(-4.0..4.0)).collect();
        check_flat(&x, GRAD_TOL, |x| {
            let out = classification_loss(x, c, &targets, 0.25, 2.0).map_err(|e| e.to_string())?;
            Ok((out.value, out.grad))
        })
    }));
    cases.push(GradCase::new("loss/combined", GRAD_TOL, combined_loss));
    cases
}

/// Combined point, axis and class loss of three predictions, two matched.
fn combined_loss(rng: &mut ChaCha8Rng, _: u64) -> Result<GradCheckReport, String> {
    let (k, bins, c) = (6, 16, 2);
    let per = 2 * k + bins + c;
    let codec = AxisCodecConfig { n_bins: bins, sigma: 1.5, ..Default::default() };
    let variant =
        [ProjectionVariant::Max, ProjectionVariant::WithPenalty, ProjectionVariant::TopK(2)][rng.gen_range(0..3)];
    let cfg = LossConfig { codec, variant, ..Default::default() };
    let targets: Vec<ClassedTarget> = (0..2)
        .map(|class| ClassedTarget { target: box_to_point_axis_target(&random_box(rng, 1.0), &codec), class })
        .collect();
    let x: Vec<f64> = (0..3 * per)
        .map(|i| if i % per < 2 * k { rng.gen_range(-1.5..1.5) } else { rng.gen_range(-3.0..3.0) })
        .collect();
    check_flat(&x, GRAD_TOL, |x| {
        let preds: Vec<(Vec<Point>, &[f64], &[f64])> = x
            .chunks_exact(per)
            .map(|p| (points_of(&p[..2 * k]), &p[2 * k..2 * k + bins], &p[2 * k + bins..]))
            .collect();
        let refs: Vec<PredictionRef<'_>> =
            preds.iter().map(|(p, a, c)| PredictionRef { points: p, axis_logits: a, class_logits: c }).collect();
        let l = point_axis_loss(&refs, &targets, &[(2, 0), (0, 1)], &cfg).map_err(|e| e.to_string())?;
        let grad = l
            .grads
            .iter()
            .flat_map(|g| g.points.iter().chain(&g.axis_logits).chain(&g.class_logits).copied())
            .collect();
        Ok((l.value, grad))
    })
}

/// Sampling offsets that put every deformable sample strictly inside a
/// cell, away from the bilinear grid lines.
fn interior_offsets(rng: &mut ChaCha8Rng, refs: &Tensor, samples: usize, map: usize) -> Tensor {
    let mut out = Vec::with_capacity(refs.rows() * samples * 2);
    for i in 0..refs.rows() {
        for _ in 0..samples {
            for c in 0..2 {
                let base = refs.row(i)[c] * map as f64 - 0.5;
                let cell = rng.gen_range(-1i64..map as i64) as f64;
                out.push(cell + rng.gen_range(0.1..0.9) - base);
            }
        }
    }
    Tensor::new(&[refs.rows(), samples * 2], out).expect("shape")
}

fn op_cases() -> Vec<GradCase> {
    fn two(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        vec![rand_tensor(rng, &[3, 4], -1.0, 1.0), rand_tensor(rng, &[3, 4], -1.0, 1.0)]
    }
    vec![
        GradCase::graph("op/add", two, |g, v| g.add(v[0], v[1])),
        GradCase::graph("op/sub", two, |g, v| g.sub(v[0], v[1])),
        GradCase::graph("op/mul", two, |g, v| g.mul(v[0], v[1])),
        GradCase::graph("op/scale", two, |g, v| Ok(g.scale(v[0], -1.7))),
        GradCase::graph(
            "op/add_row",
            |rng| vec![rand_tensor(rng, &[3, 4], -1.0, 1.0), rand_tensor(rng, &[4], -1.0, 1.0)],
            |g, v| g.add_row(v[0], v[1]),
        ),
        GradCase::graph(
            "op/matmul",
            |rng| vec![rand_tensor(rng, &[3, 4], -1.0, 1.0), rand_tensor(rng, &[4, 2], -1.0, 1.0)],
            |g, v| g.matmul(v[0], v[1]),
        ),
        GradCase::graph(
            "op/linear",
            |rng| {
                vec![
                    rand_tensor(rng, &[3, 4], -1.0, 1.0),
                    rand_tensor(rng, &[4, 5], -1.0, 1.0),
                    rand_tensor(rng, &[5], -1.0, 1.0),
                ]
            },
            |g, v| g.linear(v[0], v[1], Some(v[2])),
        ),
        GradCase::graph(
            "op/relu",
            |rng| {
                let d =
                    (0..12).map(|_| rng.gen_range(0.05..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
                vec![Tensor::new(&[3, 4], d).expect("shape")]
            },
            |g, v| Ok(g.relu(v[0])),
        ),
        GradCase::graph("op/sigmoid", two, |g, v| Ok(g.sigmoid(v[0]))),
        GradCase::graph("op/softmax_rows", two, |g, v| Ok(g.softmax_rows(v[0]))),
        GradCase::graph(
            "op/layer_norm",
            |rng| {
                vec![
                    rand_tensor(rng, &[4, 6], -2.0, 2.0),
                    rand_tensor(rng, &[6], 0.5, 1.5),
                    rand_tensor(rng, &[6], -0.5, 0.5),
                ]
            },
            |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
        ),
        GradCase::graph("op/concat_slice", two, |g, v| {
            let c = g.concat_cols(&[v[0], v[1]])?;
            let s = g.slice_cols(c, 2, 5)?;
            Ok(g.sigmoid(s))
        }),
        GradCase::graph("op/gather_merge", two, |g, v| {
            let a = g.gather_rows(v[0], &[2, 0, 2])?;
            let b = g.gather_rows(v[1], &[1])?;
            let m = g.merge_rows(&[(a, vec![0, 2, 3]), (b, vec![1])], 4)?;
            Ok(g.softmax_rows(m))
        }),
        GradCase::graph("op/repeat_group_mean", two, |g, v| {
            let r = g.repeat_rows(v[0], 2);
            let s = g.sigmoid(r);
            g.group_mean_rows(s, 3)
        }),
        GradCase::graph("op/reshape_sum", two, |g, v| {
            let r = g.reshape(v[0], &[6, 2])?;
            let s = g.softmax_rows(r);
            let m = g.mul(s, s)?;
            Ok(g.sum(m))
        }),
        GradCase::graph("op/logit", |rng| vec![rand_tensor(rng, &[2, 4], 0.05, 0.95)], |g, v| Ok(g.logit(v[0], 1e-6))),
        GradCase::graph("op/pos_enc_2d", |rng| vec![rand_tensor(rng, &[3, 2], 0.0, 1.0)], |g, v| g.pos_enc_2d(v[0], 8)),
        GradCase::graph(
            "op/polar_points",
            |rng| {
                vec![
                    rand_tensor(rng, &[2, 2], 0.3, 0.7),
                    rand_tensor(rng, &[2, 2], -0.1, 0.1),
                    rand_tensor(rng, &[2, 4], 0.01, 0.2),
                ]
            },
            |g, v| g.polar_points(v[0], v[1], v[2], 5),
        ),
        GradCase::graph(
            "op/attention_grouped",
            |rng| (0..3).map(|_| rand_tensor(rng, &[6, 4], -1.0, 1.0)).collect(),
            |g, v| g.attention(v[0], v[1], v[2], 2, 3),
        ),
        GradCase::graph(
            "op/attention_full",
            |rng| (0..3).map(|_| rand_tensor(rng, &[5, 4], -1.0, 1.0)).collect(),
            |g, v| g.attention(v[0], v[1], v[2], 1, 5),
        ),
        GradCase::graph(
            "op/deform_sample",
            |rng| {
                let (map, heads, points) = (4, 2, 2);
                let value = rand_tensor(rng, &[map * map, 4], -1.0, 1.0);
                let refs = rand_tensor(rng, &[3, 2], 0.1, 0.9);
                let offsets = interior_offsets(rng, &refs, heads * points, map);
                let weights = rand_tensor(rng, &[3, heads * points], 0.0, 1.0);
                vec![value, refs, offsets, weights]
            },
            |g, v| g.deform_sample(v[0], v[1], v[2], v[3], 4, 4, 2, 2),
        ),
    ]
}

/// A parameterized layer checked with respect to its input and parameters.
/// The input lives in the store as a pseudo-parameter named `input`.
fn layer_case<L, M, F>(name: &str, input_shape: Vec<usize>, make: M, forward: F) -> GradCase
where
    L: Clone + 'static,
    M: Fn(&mut ParamStore, &mut ChaCha8Rng) -> L + 'static,
    F: Fn(&L, &ParamStore, &mut Graph, Var) -> Result<Var, NnError> + 'static,
{
    GradCase::new(name, GRAD_TOL, move |rng, _| {
        let mut store = ParamStore::new();
        let input = store.add("input", rand_tensor(rng, &input_shape, -1.0, 1.0));
        let layer = make(&mut store, rng);
        // move zero and unit initializations off their special values
        for id in store.ids().collect::<Vec<_>>() {
            for v in store.value_mut(id).data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let block = Block { layer, store };
        check_store_fn(&block, rng, usize::MAX, GRAD_TOL, |b, g| {
            let x = g.param(&b.store, input);
            forward(&b.layer, &b.store, g, x).map(|v| vec![v]).map_err(|e| e.to_string())
        })
    })
}

fn layer_cases() -> Vec<GradCase> {
    let att = AttentionConfig { dim: 8, n_heads: 2, n_sample_points: 2 };
    vec![
        layer_case("block/linear", vec![3, 5], |s, r| Linear::new(s, "l", 5, 4, r), |l, s, g, x| l.forward(g, s, x)),
        layer_case("block/mlp", vec![3, 5], |s, r| Mlp::new(s, "m", &[5, 7, 3], r), |l, s, g, x| l.forward(g, s, x)),
        layer_case("block/layer_norm", vec![4, 6], |s, _| LayerNorm::new(s, "n", 6), |l, s, g, x| l.forward(g, s, x)),
        layer_case(
            "block/feed_forward",
            vec![3, 8],
            |s, r| FeedForward::new(s, "f", 8, 12, r),
            |l, s, g, x| l.forward(g, s, x),
        ),
        layer_case(
            "block/self_attention_grouped",
            vec![6, 8],
            move |s, r| {
                let pos = s.add("pos", rand_tensor(r, &[6, 8], -0.5, 0.5));
                (MultiHeadAttention::new(s, "a", &att, r), pos)
            },
            |(l, pos), s, g, x| {
                let p = g.param(s, *pos);
                l.forward(g, s, x, Some(p), 3)
            },
        ),
        layer_case(
            "block/self_attention_full",
            vec![5, 8],
            move |s, r| MultiHeadAttention::new(s, "a", &att, r),
            |l, s, g, x| l.forward(g, s, x, None, 5),
        ),
        layer_case(
            "block/deformable_attention",
            vec![3, 8],
            move |s, r| {
                let map = s.add("map", rand_tensor(r, &[16, 8], -1.0, 1.0));
                // the jitter below keeps these inside the unit square
                let refs = s.add("refs", rand_tensor(r, &[3, 2], 0.35, 0.65));
                (DeformableAttention::new(s, "d", &att, r), map, refs)
            },
            |(l, map, refs), s, g, x| {
                let m = g.param(s, *map);
                let v = l.project_value(g, s, m)?;
                let r = g.param(s, *refs);
                l.forward(g, s, x, r, v, 4, 4)
            },
        ),
    ]
}

/// Smallest model the decoder supports: 16x16 inputs, a 4x4 feature map and
/// two queries of five points each. `variant` cycles through the ablation
/// switches, the encoder layer, one or two decoder layers and fixed-axis mode.
pub fn micro_model_config(variant: u64) -> ModelConfig {
    let (pq, group, decoupled) = match variant % 4 {
        0 => (true, true, true),
        1 => (true, true, false),
        2 => (true, false, false),
        _ => (false, false, false),
    };
    ModelConfig {
        k: 5,
        n_queries: 2,
        dim: 8,
        n_layers: if variant % 8 >= 4 { 2 } else { 1 },
        n_classes: 2,
        n_bins: 16,
        attention: AttentionConfig { dim: 8, n_heads: 2, n_sample_points: 2 },
        ffn_dim: 16,
        patch_size: 4,
        in_channels: 3,
        encoder_layer: variant % 3 == 1,
        use_point_queries: pq,
        use_group_self_attention: group,
        use_decoupled_cross_attention: decoupled,
        fixed_axis_mode: variant % 5 == 4,
    }
}

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    let mut img = Image::new(size, size, 3);
    for v in img.data.iter_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    img
}

/// Perturbs every parameter so zero-initialized heads pass gradient along
/// every path.
fn jitter_model(model: &mut OrientedDetr, rng: &mut ChaCha8Rng) {
    for id in model.store.ids().collect::<Vec<_>>() {
        for v in model.store.value_mut(id).data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
}

const MODEL_PROBES_PER_TENSOR: usize = 2;

type Stage = fn(&OrientedDetr, &mut Graph, &Image) -> Result<Vec<Var>, String>;

fn model_stage_case(name: &str, stage: Stage) -> GradCase {
    GradCase::new(name, GRAD_TOL, move |rng, seed| {
        let cfg = micro_model_config(seed);
        let mut model = OrientedDetr::new(cfg, seed).map_err(|e| e.to_string())?;
        jitter_model(&mut model, rng);
        let image = random_image(rng, 16);
        check_store_fn(&model, rng, MODEL_PROBES_PER_TENSOR, GRAD_TOL, |m, g| stage(m, g, &image))
    })
}

fn e<E: fmt::Display>(err: E) -> String {
    err.to_string()
}

fn model_cases() -> Vec<GradCase> {
    vec![
        model_stage_case("model/backbone", |m, g, img| Ok(vec![m.backbone_stub(g, img).map_err(e)?.features])),
        model_stage_case("model/query_selection", |m, g, img| {
            let fm = m.backbone_stub(g, img).map_err(e)?;
            let (q, cell_logits) = m.select_object_queries(g, &fm).map_err(e)?;
            Ok(vec![q.content, cell_logits])
        }),
        model_stage_case("model/conversion", |m, g, img| {
            if !m.cfg.use_point_queries {
                return Ok(vec![]);
            }
            let fm = m.backbone_stub(g, img).map_err(e)?;
            let (q, _) = m.select_object_queries(g, &fm).map_err(e)?;
            let pq = m.object_to_point_conversion(g, &q).map_err(e)?;
            Ok(vec![pq.content, pq.pos, pq.refs])
        }),
        model_stage_case("model/decoder_layer", |m, g, img| {
            if !m.cfg.use_point_queries {
                return Ok(vec![]);
            }
            let fm = m.backbone_stub(g, img).map_err(e)?;
            let (q, _) = m.select_object_queries(g, &fm).map_err(e)?;
            let pq = m.object_to_point_conversion(g, &q).map_err(e)?;
            Ok(vec![m.points_decoder_layer(g, 0, &pq, &fm).map_err(e)?])
        }),
        model_stage_case("model/forward", |m, g, img| {
            let out = m.forward(g, img).map_err(e)?;
            let mut vars = vec![out.cell_logits];
            for l in &out.layers {
                vars.push(l.points);
                vars.push(l.class);
                vars.extend(l.axis);
            }
            Ok(vars)
        }),
        GradCase::new("model/end_to_end_loss", MODEL_GRAD_TOL, end_to_end),
    ]
}

/// Training loss of the micro model on a synthetic 16x16 scene against the
/// parameter gradients the optimizer consumes.
fn end_to_end(rng: &mut ChaCha8Rng, seed: u64) -> Result<GradCheckReport, String> {
    let cfg = micro_model_config(seed);
    let mut model = OrientedDetr::new(cfg.clone(), seed).map_err(e)?;
    jitter_model(&mut model, rng);
    let classes: Vec<String> = vec!["a".into(), "b".into()];
    let params = SynthParams {
        n_images: 1,
        height: 16,
        width: 16,
        max_objects: 2,
        size_range: (7.0, 11.0),
        aspect_range: (1.2, 2.0),
        classes: classes.clone(),
    };
    let synth = generate_scene(seed, 0, &params).map_err(e)?;
    let scene = Scene { id: "micro".into(), image: synth.image, annotations: synth.annotations };
    let codec = AxisCodecConfig { n_bins: cfg.n_bins, sigma: 1.5, ..Default::default() };
    let sample = prepare_sample(&scene, &classes, &codec).map_err(e)?;
    let variant =
        [ProjectionVariant::Max, ProjectionVariant::WithPenalty, ProjectionVariant::TopK(2)][(seed % 3) as usize];
    let tcfg = TrainLossConfig {
        loss: LossConfig { codec, variant, ..Default::default() },
        aux_loss: true,
        select_weight: 1.0,
    };

    let (_, grads, detached) = loss_grads_detached(&model, &sample, &tcfg).map_err(e)?;
    let analytic: Vec<f64> = grads.concat();
    let used: Vec<usize> =
        grads.iter().enumerate().filter(|(_, g)| g.iter().any(|v| *v != 0.0)).map(|(i, _)| i).collect();
    let coords = pick_coords(rng, &model.store, &used, MODEL_PROBES_PER_TENSOR);
    let table = flat_index(&model.store);
    probe(&analytic, &coords, MODEL_GRAD_TOL, |d| {
        let m = perturbed(&model, &table, d);
        evaluate_loss_replaying(&m, &sample, &tcfg, detached.clone()).map(|l| l.total).map_err(e)
    })
}

/// Every built-in gradient check.
pub fn grad_cases() -> Vec<GradCase> {
    let mut cases = loss_cases();
    cases.extend(op_cases());
    cases.extend(layer_cases());
    cases.extend(model_cases());
    cases
}

pub fn grad_suite(opts: &VerifyOptions) -> SuiteReport {
    grad_suite_with(opts, grad_cases())
}

/// Runs the given cases over `opts.grad_configs` seeds each.
pub fn grad_suite_with(opts: &VerifyOptions, cases: Vec<GradCase>) -> SuiteReport {
    timed(Suite::Grad, || cases.iter().map(|c| run_grad_case(c, opts)).collect())
}

fn run_grad_case(case: &GradCase, opts: &VerifyOptions) -> CheckResult {
    let mut total = GradCheckReport::default();
    let mut worst_seed = 0;
    for i in 0..opts.grad_configs {
        let seed = opts.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let mut rng = sub_rng(seed, 0x6772_6164);
        match (case.run)(&mut rng, seed) {
            Ok(r) => {
                if r.max_rel_err > total.max_rel_err {
                    worst_seed = seed;
                }
                total = total.merge(r);
            }
            Err(err) => return check(&case.name, f64::INFINITY, case.tolerance, format!("seed {seed}: {err}")),
        }
    }
    let probed = total.checked + total.skipped;
    let kink_share = if probed == 0 { 0.0 } else { total.skipped as f64 / probed as f64 };
    let mut detail = format!("{} configs, {} coords", opts.grad_configs, total.checked);
    if total.skipped > 0 {
        detail.push_str(&format!(", {} kinks skipped", total.skipped));
    }
    if let Some((i, a, n)) = total.worst {
        detail.push_str(&format!(", worst seed {worst_seed} idx {i}: analytic {a:.6e} numeric {n:.6e}"));
    }
    let mut res = check(&case.name, total.max_rel_err, case.tolerance, detail);
    if kink_share > MAX_KINK_SHARE || total.checked == 0 {
        res.passed = false;
        res.detail.push_str(&format!(" (kink share {kink_share:.3})"));
    }
    res
}

// ---------------------------------------------------------------- geometry

/// IoU estimated by point-in-box tests on a jittered grid of about
/// `samples` points over the joint bounding box.
pub fn monte_carlo_iou(a: &OrientedBox, b: &OrientedBox, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let cs: Vec<Point> = a.corners().into_iter().chain(b.corners()).collect();
    let (x0, x1) = cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
    let (y0, y1) = cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    let n = (samples as f64).sqrt().ceil() as usize;
    let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let frame = |r: &OrientedBox| {
        let (s, c) = r.theta.sin_cos();
        [r.cx, r.cy, c, s, r.w / 2.0, r.h / 2.0]
    };
    let inside = |[cx, cy, c, s, hw, hh]: [f64; 6], x: f64, y: f64| {
        let (px, py) = (x - cx, y - cy);
        (px * c + py * s).abs() <= hw && (py * c - px * s).abs() <= hh
    };
    let (fa, fb) = (frame(a), frame(b));
    let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
    for i in 0..n {
        for j in 0..n {
            let x = x0 + (j as f64 + rng.gen::<f64>()) * dx;
            let y = y0 + (i as f64 + rng.gen::<f64>()) * dy;
            let (ia, ib) = (inside(fa, x, y), inside(fb, x, y));
            na += ia as u64;
            nb += ib as u64;
            both += (ia && ib) as u64;
        }
    }
    let union = na + nb - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

/// Area of the smallest rectangle aligned with the direction through any
/// two of the points. The optimum is aligned with a hull edge, and every
/// hull edge joins two input points.
pub fn brute_force_min_rect_area(points: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, &p) in points.iter().enumerate() {
        for &q in &points[i + 1..] {
            let d = q - p;
            let len = d.norm();
            if len == 0.0 {
                continue;
            }
            let u = d * (1.0 / len);
            let v = u.perp();
            let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for &r in points {
                let (a, b) = (r.dot(u), r.dot(v));
                u0 = u0.min(a);
                u1 = u1.max(a);
                v0 = v0.min(b);
                v1 = v1.max(b);
            }
            best = best.min((u1 - u0) * (v1 - v0));
        }
    }
    best
}

fn random_point_set(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let n = rng.gen_range(3..=40);
    match rng.gen_range(0..3) {
        0 => (0..n).map(|_| Point::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0))).collect(),
        // stretched and rotated cloud
        1 => {
            let (a, s) = (rng.gen_range(0.0..PI), rng.gen_range(0.05..1.0));
            (0..n).map(|_| Point::new(rng.gen_range(-5.0..5.0), s * rng.gen_range(-5.0..5.0)).rotate(a)).collect()
        }
        // integer lattice: duplicates and collinear hull vertices
        _ => (0..n).map(|_| Point::new(rng.gen_range(0..6) as f64, rng.gen_range(0..6) as f64)).collect(),
    }
}

pub fn geom_suite(opts: &VerifyOptions) -> SuiteReport {
    timed(Suite::Geom, || vec![iou_fixtures(), iou_monte_carlo(opts), min_rect_brute_force(opts)])
}

fn iou_fixtures() -> CheckResult {
    let mut rng = sub_rng(0, 1);
    let mut identical: f64 = 0.0;
    for _ in 0..200 {
        let b = random_box(&mut rng, 5.0);
        identical = identical.max((rotated_iou(&b, &b) - 1.0).abs());
    }
    let a = OrientedBox::new(0.5, 0.5, 1.0, 1.0, 0.0).expect("box");
    let b = OrientedBox::new(1.0, 1.0, 1.0, 1.0, 0.0).expect("box");
    let offset = (rotated_iou(&a, &b) - 1.0 / 7.0).abs();
    let far = OrientedBox::new(5.0, 5.0, 1.0, 1.0, 0.3).expect("box");
    let disjoint = rotated_iou(&a, &far).abs();
    let mut res = check(
        "iou/fixtures",
        offset.max(disjoint),
        IOU_FIXTURE_TOL,
        format!("identical {identical:.1e}, offset squares {offset:.1e}, disjoint {disjoint:.1e}"),
    );
    // identical boxes must give exactly one
    res.passed &= identical == 0.0;
    res
}

fn iou_monte_carlo(opts: &VerifyOptions) -> CheckResult {
    let mut rng = sub_rng(opts.seed, 2);
    let mut worst: f64 = 0.0;
    let mut at = (0.0, 0.0);
    for _ in 0..opts.iou_pairs {
        let a = random_box(&mut rng, 1.0);
        let b = random_box(&mut rng, 1.0);
        let exact = rotated_iou(&a, &b);
        let mc = monte_carlo_iou(&a, &b, opts.iou_samples, &mut rng);
        if (exact - mc).abs() >= worst {
            worst = (exact - mc).abs();
            at = (exact, mc);
        }
    }
    check(
        "iou/monte_carlo",
        worst,
        IOU_MC_TOL,
        format!("{} pairs x {} samples, worst exact {:.6} mc {:.6}", opts.iou_pairs, opts.iou_samples, at.0, at.1),
    )
}

fn min_rect_brute_force(opts: &VerifyOptions) -> CheckResult {
    let mut rng = sub_rng(opts.seed, 3);
    let mut worst: f64 = 0.0;
    let mut degenerate = 0;
    let mut problems = Vec::new();
    for set in 0..opts.rect_sets {
        let pts = random_point_set(&mut rng);
        let brute = brute_force_min_rect_area(&pts);
        match min_area_rect(&pts) {
            Ok(r) => {
                worst = worst.max((r.w * r.h - brute).abs() / brute.max(f64::MIN_POSITIVE));
                let tol = 1e-9 * (1.0 + r.w.max(r.h));
                if let Some(p) = pts.iter().find(|p| !r.contains(**p, tol)) {
                    worst = f64::INFINITY;
                    problems.push(format!("set {set}: point ({}, {}) outside", p.x, p.y));
                }
            }
            // collinear or coincident input; the brute force agrees when its area is zero
            Err(_) if brute <= 1e-12 => degenerate += 1,
            Err(err) => {
                worst = f64::INFINITY;
                problems.push(format!("set {set}: {err}"));
            }
        }
    }
    let mut detail = format!("{} point sets, {degenerate} degenerate", opts.rect_sets);
    if let Some(p) = problems.first() {
        detail.push_str(&format!(", {p}"));
    }
    check("min_area_rect/brute_force", worst, RECT_AREA_TOL, detail)
}

// ---------------------------------------------------------------- codec

pub fn codec_suite(opts: &VerifyOptions) -> SuiteReport {
    timed(Suite::Codec, || {
        vec![codec_roundtrip(), codec_shift_invariance(), codec_seam_continuity(opts), square_swap_invariance(opts)]
    })
}

/// Decoded against encoded direction over a 0.25 degree sweep, in bins.
fn codec_roundtrip() -> CheckResult {
    let mut worst: f64 = 0.0;
    for (sigma, bins) in [(6.0, 360), (0.0, 360), (1.5, 72)] {
        let codec = AxisCodecConfig { n_bins: bins, sigma, ..Default::default() };
        for step in 0..(360 * 4) {
            let theta = (step as f64 * 0.25).to_radians();
            let d = decode_axis(&encode_axis(theta, &codec).values).expect("finite encoding");
            worst = worst.max(angle_diff(d.principal_reduced, theta, FRAC_PI_2) / codec.bin_width());
        }
    }
    check("codec/roundtrip", worst, 0.5 + 1e-9, "1440 angles x 3 codecs, error in bins".into())
}

fn codec_shift_invariance() -> CheckResult {
    let mut mismatches = 0;
    let mut total = 0;
    for (sigma, bins) in [(6.0, 360), (0.0, 360), (2.5, 40)] {
        let codec = AxisCodecConfig { n_bins: bins, sigma, ..Default::default() };
        for step in 0..(360 * 4) {
            let theta = (step as f64 * 0.25).to_radians();
            let e = encode_axis(theta, &codec);
            mismatches += (e.shifted(bins / 4) != e) as usize;
            // at bin centers the label of theta + 90 degrees is the same label
            let center = (step % bins) as f64 * codec.bin_width();
            mismatches += (encode_axis(center + FRAC_PI_2, &codec) != encode_axis(center, &codec)) as usize;
            total += 2;
        }
    }
    check("codec/quarter_shift", mismatches as f64, 0.0, format!("{total} exact comparisons"))
}

/// Seam step of the cross-axis loss over the largest interior step across
/// 0.1 degree steps; at most 1.01.
fn codec_seam_continuity(opts: &VerifyOptions) -> CheckResult {
    let codec = AxisCodecConfig::default();
    let mut rng = sub_rng(opts.seed, 4);
    let mut worst: f64 = 0.0;
    let mut endpoints_differ = false;
    for _ in 0..5 {
        let logits: Vec<f64> = (0..codec.n_bins).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let loss = |theta: f64| cross_axis_loss(&logits, &encode_axis(theta, &codec), &codec).expect("lengths").value;
        let steps = 3600;
        let values: Vec<f64> = (0..steps).map(|i| loss((i as f64 * 0.1).to_radians())).collect();
        let interior = values.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        let seam = (values[0] - values[steps - 1]).abs();
        endpoints_differ |= loss(TAU) != values[0];
        worst = worst.max(seam / interior.max(f64::MIN_POSITIVE));
    }
    let worst = if endpoints_differ { f64::INFINITY } else { worst };
    check("codec/seam_continuity", worst, 1.01, "seam step / largest interior step, 5 logit draws".into())
}

/// For square targets, relabelling which radial comes first leaves the
/// projection loss and the axis label exactly unchanged.
fn square_swap_invariance(opts: &VerifyOptions) -> CheckResult {
    let codec = AxisCodecConfig::default();
    let mut rng = sub_rng(opts.seed, 5);
    let mut mismatches = 0;
    let n = codec.n_bins;
    for bin in 0..n {
        let theta = bin as f64 * codec.bin_width();
        let side = rng.gen_range(0.5..3.0);
        let rect = OrientedBox { cx: rng.gen_range(-2.0..2.0), cy: rng.gen_range(-2.0..2.0), w: side, h: side, theta };
        let t1 = box_to_point_axis_target(&rect, &codec);
        let [v1, v2, v3, v4] = t1.radials;
        let t2 = PointAxisTarget {
            center: t1.center,
            radials: [v2, v3, v4, v1],
            axis: encode_axis(theta + FRAC_PI_2, &codec),
        };
        mismatches += (t1.axis != t2.axis) as usize;
        let pts: Vec<Point> = (0..13).map(|_| Point::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))).collect();
        for variant in [ProjectionVariant::Max, ProjectionVariant::WithPenalty, ProjectionVariant::TopK(3)] {
            let a = max_projection_variant(&pts, &t1, variant).expect("valid target").value;
            let b = max_projection_variant(&pts, &t2, variant).expect("valid target").value;
            mismatches += (a != b) as usize;
        }
    }
    check("codec/square_swap", mismatches as f64, 0.0, format!("{n} orientations, label and 3 loss variants"))
}

// ---------------------------------------------------------------- matching

/// Minimum total cost over all assignments of the smaller side.
pub fn brute_force_assignment(costs: &CostMatrix) -> f64 {
    let (r, c) = (costs.rows(), costs.cols());
    let transpose = r > c;
    let (small, large) = if transpose { (c, r) } else { (r, c) };
    let at = |i: usize, j: usize| if transpose { costs.get(j, i) } else { costs.get(i, j) };
    fn rec(i: usize, small: usize, used: &mut [bool], acc: f64, best: &mut f64, at: &dyn Fn(usize, usize) -> f64) {
        if i == small {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                rec(i + 1, small, used, acc + at(i, j), best, at);
                used[j] = false;
            }
        }
    }
    let mut best = if small == 0 { 0.0 } else { f64::INFINITY };
    rec(0, small, &mut vec![false; large], 0.0, &mut best, &at);
    best
}

pub fn match_suite(opts: &VerifyOptions) -> SuiteReport {
    timed(Suite::Match, || {
        let fixture =
            CostMatrix::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]]).expect("rows");
        let fixed = hungarian(&fixture).map(|a| fixture.total(&a)).unwrap_or(f64::INFINITY);
        let mut rng = sub_rng(opts.seed, 6);
        let mut worst: f64 = 0.0;
        let mut problems = Vec::new();
        for t in 0..opts.match_matrices {
            let (r, c) = (rng.gen_range(1..=opts.match_max_size), rng.gen_range(1..=opts.match_max_size));
            // small integer costs produce many tied optima
            let integer = rng.gen_bool(0.3);
            let data: Vec<f64> = (0..r * c)
                .map(|_| if integer { rng.gen_range(0..4) as f64 } else { rng.gen_range(-5.0..10.0) })
                .collect();
            let m = CostMatrix::new(r, c, data);
            let brute = brute_force_assignment(&m);
            match hungarian(&m) {
                Ok(a) => {
                    let mut rows: Vec<usize> = a.iter().map(|p| p.0).collect();
                    let mut cols: Vec<usize> = a.iter().map(|p| p.1).collect();
                    rows.sort_unstable();
                    rows.dedup();
                    cols.sort_unstable();
                    cols.dedup();
                    if a.len() != r.min(c) || rows.len() != a.len() || cols.len() != a.len() {
                        worst = f64::INFINITY;
                        problems.push(format!("trial {t}: invalid assignment {a:?}"));
                    } else {
                        worst = worst.max((m.total(&a) - brute).abs() / brute.abs().max(1.0));
                    }
                }
                Err(err) => {
                    worst = f64::INFINITY;
                    problems.push(format!("trial {t}: {err}"));
                }
            }
        }
        let mut detail = format!("{} matrices up to {n}x{n}", opts.match_matrices, n = opts.match_max_size);
        if let Some(p) = problems.first() {
            detail.push_str(&format!(", {p}"));
        }
        vec![
            check("hungarian/fixture_3x3", (fixed - 5.0).abs(), MATCH_TOL, format!("total {fixed}, expected 5")),
            check("hungarian/brute_force", worst, MATCH_TOL, detail),
        ]
    })
}
