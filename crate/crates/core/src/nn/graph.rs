//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass. Nodes
//! are appended in evaluation order, so a single reverse sweep in
//! [`Graph::backward`] visits every node after all of its consumers.

use std::f64::consts::TAU;

use super::params::{ParamId, ParamStore};
use super::{kernels, NnError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

type CustomBackward = Box<dyn Fn(&[&Tensor], &Tensor, &[f64]) -> Vec<Vec<f64>>>;

enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    ConcatCols(Vec<Var>),
    SliceCols { a: Var, start: usize },
    GatherRows { a: Var, idx: Vec<usize> },
    MergeRows { parts: Vec<(Var, Vec<usize>)> },
    RepeatRows { a: Var, times: usize },
    GroupMeanRows { a: Var, group: usize },
    Reshape(Var),
    Sum(Var),
    Logit { a: Var, eps: f64 },
    PosEnc2d { pts: Var },
    PolarPoints { refs: Var, delta: Var, radii: Var, k: usize, clamped: Vec<bool> },
    Attention { q: Var, k: Var, v: Var, heads: usize, group: usize, probs: Vec<f64> },
    Deform(Box<DeformCache>),
    Custom { inputs: Vec<Var>, backward: CustomBackward },
}

struct DeformCache {
    value: Var,
    refs: Var,
    offsets: Var,
    weights: Var,
    map_h: usize,
    map_w: usize,
    heads: usize,
    points: usize,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by a backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of the node size when nothing reached it.
    pub fn get_or_zeros(&self, graph: &Graph, v: Var) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; graph.value(v).len()])
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: Vec<(ParamId, Var)>,
    /// Values produced by `detach`, in call order.
    detached: Vec<Tensor>,
    replay: Vec<Tensor>,
}

fn mismatch(op: &'static str, detail: String) -> NnError {
    NnError::ShapeMismatch { op, detail }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph whose `detach` calls return `values` in order instead of the
    /// live values, so a perturbed rerun sees the same stop-gradient
    /// constants as the run it is compared against.
    pub fn replaying(values: Vec<Tensor>) -> Self {
        Self { replay: values, ..Self::default() }
    }

    pub fn detached_values(&self) -> &[Tensor] {
        &self.detached
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a parameter as a differentiable leaf; repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.bound.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone());
        self.bound.push((id, v));
        v
    }

    pub fn bound_params(&self) -> &[(ParamId, Var)] {
        &self.bound
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let live = self.value(v);
        let t = match self.replay.get(self.detached.len()) {
            Some(r) if r.shape() == live.shape() => r.clone(),
            _ => live.clone(),
        };
        self.detached.push(t.clone());
        self.constant(t)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NnError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(mismatch(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("add", a, b)?;
        let t = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds `b` (one row of length `cols(a)`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let c = self.value(a).cols();
        if self.value(b).len() != c {
            return Err(mismatch("add_row", format!("{:?} + row {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        let mut t = self.value(a).clone();
        let bias = self.value(b).data().to_vec();
        for row in t.data_mut().chunks_exact_mut(c) {
            for (x, y) in row.iter_mut().zip(&bias) {
                *x += y;
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::AddRow(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.map(a, |x| x * s);
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; n * m];
        kernels::mm(ta.data(), tb.data(), &mut out, n, k, m);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::MatMul(a, b), rg))
    }

    /// `x @ w + b` for `x: (n, in)`, `w: (in, out)`, `b: (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let (tx, tw) = (self.value(x), self.value(w));
        let k = tx.cols();
        if tw.shape().len() != 2 || tw.shape()[0] != k {
            return Err(mismatch("linear", format!("{:?} x {:?}", tx.shape(), tw.shape())));
        }
        let n = tx.rows();
        let m = tw.shape()[1];
        let mut out = vec![0.0; n * m];
        if let Some(b) = b {
            let tb = self.value(b);
            if tb.len() != m {
                return Err(mismatch("linear", format!("bias {:?} for {m} outputs", tb.shape())));
            }
            for row in out.chunks_exact_mut(m) {
                row.copy_from_slice(tb.data());
            }
        }
        kernels::mm(tx.data(), tw.data(), &mut out, n, k, m);
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().expect("non-scalar") = m;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, crate::loss::sigmoid);
        let rg = self.rg(&[a]);
        self.push(t, Op::Sigmoid(a), rg)
    }

    /// Softmax over the last dimension.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        let c = t.cols();
        for row in t.data_mut().chunks_exact_mut(c) {
            kernels::softmax_in_place(row);
        }
        let rg = self.rg(&[a]);
        self.push(t, Op::SoftmaxRows(a), rg)
    }

    /// Normalizes each row to zero mean and unit variance, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NnError> {
        let tx = self.value(x);
        let c = tx.cols();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(mismatch("layer_norm", format!("{:?} with affine of {}", tx.shape(), self.value(gamma).len())));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for (o, v) in xhat[r * c..(r + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(c) {
            for ((o, gi), bi) in row.iter_mut().zip(g).zip(b) {
                *o = *o * gi + bi;
            }
        }
        let t = Tensor::new(tx.shape(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(mismatch("concat_cols", "row counts differ".into()));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(&[rows, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let t = self.value(a);
        let c = t.cols();
        if start + len > c {
            return Err(mismatch("slice_cols", format!("[{start}, {}) of {c}", start + len)));
        }
        let rows = t.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(&[rows, len], out)?, Op::SliceCols { a, start }, rg))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NnError> {
        let t = self.value(a);
        let (rows, c) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= rows {
                return Err(mismatch("gather_rows", format!("row {i} of {rows}")));
            }
            out.extend_from_slice(t.row(i));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(&[idx.len(), c], out)?, Op::GatherRows { a, idx: idx.to_vec() }, rg))
    }

    /// Assembles `n` rows: row `idx[i]` of the output is row `i` of the paired part.
    /// Every output row must be written exactly once.
    pub fn merge_rows(&mut self, parts: &[(Var, Vec<usize>)], n: usize) -> Result<Var, NnError> {
        let c = self.value(parts[0].0).cols();
        let mut out = vec![0.0; n * c];
        let mut seen = vec![false; n];
        for (v, idx) in parts {
            let t = self.value(*v);
            if t.cols() != c || t.rows() != idx.len() {
                return Err(mismatch("merge_rows", format!("part {:?} for {} rows", t.shape(), idx.len())));
            }
            for (i, &dst) in idx.iter().enumerate() {
                if dst >= n || seen[dst] {
                    return Err(mismatch("merge_rows", format!("row {dst} out of range or repeated")));
                }
                seen[dst] = true;
                out[dst * c..(dst + 1) * c].copy_from_slice(t.row(i));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(mismatch("merge_rows", "rows left unassigned".into()));
        }
        let vars: Vec<Var> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&vars);
        Ok(self.push(Tensor::new(&[n, c], out)?, Op::MergeRows { parts: parts.to_vec() }, rg))
    }

    /// Repeats each row `times` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let t = self.value(a);
        let (rows, c) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(rows * times * c);
        for r in 0..rows {
            for _ in 0..times {
                out.extend_from_slice(t.row(r));
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&[rows * times, c], out).expect("shape"), Op::RepeatRows { a, times }, rg)
    }

    /// Mean over consecutive blocks of `group` rows.
    pub fn group_mean_rows(&mut self, a: Var, group: usize) -> Result<Var, NnError> {
        let t = self.value(a);
        let (rows, c) = (t.rows(), t.cols());
        if group == 0 || rows % group != 0 {
            return Err(NnError::GroupSizeMismatch { rows, group });
        }
        let mut out = vec![0.0; rows / group * c];
        for r in 0..rows {
            let dst = &mut out[(r / group) * c..(r / group + 1) * c];
            for (o, v) in dst.iter_mut().zip(t.row(r)) {
                *o += v / group as f64;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(&[rows / group, c], out)?, Op::GroupMeanRows { a, group }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NnError> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Inverse sigmoid with the input clamped to `[eps, 1 - eps]`.
    pub fn logit(&mut self, a: Var, eps: f64) -> Var {
        let t = self.map(a, |x| {
            let x = x.clamp(eps, 1.0 - eps);
            (x / (1.0 - x)).ln()
        });
        let rg = self.rg(&[a]);
        self.push(t, Op::Logit { a, eps }, rg)
    }

    /// Sinusoidal embedding of normalized `(x, y)` rows: `concat(PE(x), PE(y))`,
    /// each half of width `dim / 2`.
    pub fn pos_enc_2d(&mut self, pts: Var, dim: usize) -> Result<Var, NnError> {
        let t = self.value(pts);
        if t.cols() != 2 {
            return Err(mismatch("pos_enc_2d", format!("points {:?}", t.shape())));
        }
        if dim % 4 != 0 {
            return Err(NnError::OddDimension(dim));
        }
        let half = dim / 2;
        let rows = t.rows();
        let mut out = vec![0.0; rows * dim];
        for r in 0..rows {
            let p = t.row(r);
            for (axis, &coord) in p.iter().enumerate() {
                let dst = &mut out[r * dim + axis * half..r * dim + (axis + 1) * half];
                write_pe(coord, dst);
            }
        }
        let rg = self.rg(&[pts]);
        Ok(self.push(Tensor::new(&[rows, dim], out)?, Op::PosEnc2d { pts }, rg))
    }

    /// Initial point positions for `k`-point groups: `k - 1` boundary points at
    /// `refs + r_j (cos t_j, sin t_j)` with `t_j = 2 pi j / (k - 1)`, then the
    /// center `refs + delta`. Coordinates are clamped to `[0, 1]`.
    pub fn polar_points(&mut self, refs: Var, delta: Var, radii: Var, k: usize) -> Result<Var, NnError> {
        let (tr, td, trad) = (self.value(refs), self.value(delta), self.value(radii));
        let n = tr.rows();
        if tr.cols() != 2 || td.rows() != n || td.cols() != 2 || trad.rows() != n || trad.cols() != k - 1 {
            return Err(mismatch(
                "polar_points",
                format!("refs {:?} delta {:?} radii {:?} k {k}", tr.shape(), td.shape(), trad.shape()),
            ));
        }
        let mut out = vec![0.0; n * k * 2];
        let mut clamped = vec![false; n * k * 2];
        for i in 0..n {
            let (rx, ry) = (tr.row(i)[0], tr.row(i)[1]);
            for j in 0..k {
                let (x, y) = if j + 1 == k {
                    (rx + td.row(i)[0], ry + td.row(i)[1])
                } else {
                    let ang = TAU * j as f64 / (k - 1) as f64;
                    let r = trad.row(i)[j];
                    (rx + r * ang.cos(), ry + r * ang.sin())
                };
                let base = (i * k + j) * 2;
                for (o, v) in [x, y].into_iter().enumerate() {
                    let c = v.clamp(0.0, 1.0);
                    clamped[base + o] = c != v;
                    out[base + o] = c;
                }
            }
        }
        let rg = self.rg(&[refs, delta, radii]);
        Ok(self.push(Tensor::new(&[n * k, 2], out)?, Op::PolarPoints { refs, delta, radii, k, clamped }, rg))
    }

    /// Multi-head scaled dot-product attention restricted to consecutive
    /// blocks of `group` rows. `q`, `k`, `v` are `(n, dim)` with `dim` split
    /// evenly across `heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, group: usize) -> Result<Var, NnError> {
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let (n, d) = (self.value(q).rows(), self.value(q).cols());
        if group == 0 || n % group != 0 {
            return Err(NnError::GroupSizeMismatch { rows: n, group });
        }
        if heads == 0 || d % heads != 0 {
            return Err(mismatch("attention", format!("dim {d} not divisible by {heads} heads")));
        }
        let (out, probs) = kernels::attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            n,
            d,
            heads,
            group,
        );
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(Tensor::new(&[n, d], out)?, Op::Attention { q, k, v, heads, group, probs }, rg))
    }

    /// Deformable sampling: for each query row, `heads x points` bilinear
    /// samples of the `(map_h * map_w, dim)` value map at
    /// `refs * (W, H) + offsets` (in cell units), mixed by `weights`.
    #[allow(clippy::too_many_arguments)]
    pub fn deform_sample(
        &mut self,
        value: Var,
        refs: Var,
        offsets: Var,
        weights: Var,
        map_h: usize,
        map_w: usize,
        heads: usize,
        points: usize,
    ) -> Result<Var, NnError> {
        let (tv, tr, to, tw) = (self.value(value), self.value(refs), self.value(offsets), self.value(weights));
        let n = tr.rows();
        let d = tv.cols();
        if tv.rows() != map_h * map_w
            || tr.cols() != 2
            || to.rows() != n
            || to.cols() != heads * points * 2
            || tw.rows() != n
            || tw.cols() != heads * points
            || d % heads != 0
        {
            return Err(mismatch(
                "deform_sample",
                format!(
                    "value {:?} refs {:?} offsets {:?} weights {:?} map {map_h}x{map_w} heads {heads} points {points}",
                    tv.shape(),
                    tr.shape(),
                    to.shape(),
                    tw.shape()
                ),
            ));
        }
        for r in 0..n {
            let p = tr.row(r);
            if !(-1e-12..=1.0 + 1e-12).contains(&p[0]) || !(-1e-12..=1.0 + 1e-12).contains(&p[1]) {
                return Err(NnError::RefPointOutOfRange { x: p[0], y: p[1] });
            }
        }
        let out = kernels::deform_forward(
            tv.data(),
            tr.data(),
            to.data(),
            tw.data(),
            &kernels::DeformDims { n, d, map_h, map_w, heads, points },
        );
        let cache = DeformCache { value, refs, offsets, weights, map_h, map_w, heads, points };
        let rg = self.rg(&[value, refs, offsets, weights]);
        Ok(self.push(Tensor::new(&[n, d], out)?, Op::Deform(Box::new(cache)), rg))
    }

    /// Operation with caller-provided forward value and backward rule. The
    /// backward closure receives the input values, the output value and the
    /// output gradient, and returns one gradient buffer per input.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor,
        backward: impl Fn(&[&Tensor], &Tensor, &[f64]) -> Vec<Vec<f64>> + 'static,
    ) -> Var {
        let rg = self.rg(inputs);
        self.push(value, Op::Custom { inputs: inputs.to_vec(), backward: Box::new(backward) }, rg)
    }

    /// Reverse sweep seeded with `d(output)/d(loss)` for a scalar output.
    pub fn backward_scalar(&self, out: Var) -> Gradients {
        let n = self.value(out).len();
        self.backward(&[(out, vec![1.0; n])])
    }

    /// Reverse sweep with explicit seed gradients; seeds for the same node add up.
    pub fn backward(&self, seeds: &[(Var, Vec<f64>)]) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            assert_eq!(g.len(), self.value(*v).len(), "seed gradient size for node {}", v.0);
            acc(&mut grads, *v, g);
            last = last.max(v.0);
        }
        for i in (0..grads.len().min(last + 1)).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.backprop_node(node, &gout, &mut grads);
            }
            grads[i] = Some(gout);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.value(v);
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        acc(grads, v, gout);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(grads, *a, gout);
                }
                if wants(*b) {
                    let neg: Vec<f64> = gout.iter().map(|g| -g).collect();
                    acc(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let g: Vec<f64> = gout.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect();
                    acc(grads, *a, &g);
                }
                if wants(*b) {
                    let g: Vec<f64> = gout.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect();
                    acc(grads, *b, &g);
                }
            }
            Op::AddRow(a, b) => {
                if wants(*a) {
                    acc(grads, *a, gout);
                }
                if wants(*b) {
                    let c = val(*b).len();
                    let mut g = vec![0.0; c];
                    for row in gout.chunks_exact(c) {
                        for (s, x) in g.iter_mut().zip(row) {
                            *s += x;
                        }
                    }
                    acc(grads, *b, &g);
                }
            }
            Op::Scale(a, s) => {
                let g: Vec<f64> = gout.iter().map(|g| g * s).collect();
                acc(grads, *a, &g);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if wants(*a) {
                    let mut g = vec![0.0; n * k];
                    kernels::mm_bt(gout, tb.data(), &mut g, n, m, k);
                    acc(grads, *a, &g);
                }
                if wants(*b) {
                    let mut g = vec![0.0; k * m];
                    kernels::mm_at(ta.data(), gout, &mut g, n, k, m);
                    acc(grads, *b, &g);
                }
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (val(*x), val(*w));
                let (k, m) = (tw.shape()[0], tw.shape()[1]);
                let n = tx.rows();
                if wants(*x) {
                    let mut g = vec![0.0; n * k];
                    kernels::mm_bt(gout, tw.data(), &mut g, n, m, k);
                    acc(grads, *x, &g);
                }
                if wants(*w) {
                    let mut g = vec![0.0; k * m];
                    kernels::mm_at(tx.data(), gout, &mut g, n, k, m);
                    acc(grads, *w, &g);
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let mut g = vec![0.0; m];
                        for row in gout.chunks_exact(m) {
                            for (s, x) in g.iter_mut().zip(row) {
                                *s += x;
                            }
                        }
                        acc(grads, *b, &g);
                    }
                }
            }
            Op::Relu(a) => {
                let g: Vec<f64> =
                    gout.iter().zip(val(*a).data()).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                acc(grads, *a, &g);
            }
            Op::Sigmoid(a) => {
                let g: Vec<f64> = gout.iter().zip(node.value.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                acc(grads, *a, &g);
            }
            Op::SoftmaxRows(a) => {
                let c = node.value.cols();
                let mut g = vec![0.0; gout.len()];
                for ((dst, go), p) in
                    g.chunks_exact_mut(c).zip(gout.chunks_exact(c)).zip(node.value.data().chunks_exact(c))
                {
                    let dotp: f64 = go.iter().zip(p).map(|(a, b)| a * b).sum();
                    for ((d, gi), pi) in dst.iter_mut().zip(go).zip(p) {
                        *d = pi * (gi - dotp);
                    }
                }
                acc(grads, *a, &g);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let c = node.value.cols();
                let gam = val(*gamma).data();
                if wants(*gamma) || wants(*beta) {
                    let mut gg = vec![0.0; c];
                    let mut gb = vec![0.0; c];
                    for (go, xh) in gout.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for i in 0..c {
                            gg[i] += go[i] * xh[i];
                            gb[i] += go[i];
                        }
                    }
                    if wants(*gamma) {
                        acc(grads, *gamma, &gg);
                    }
                    if wants(*beta) {
                        acc(grads, *beta, &gb);
                    }
                }
                if wants(*x) {
                    let mut g = vec![0.0; gout.len()];
                    for (r, ((dst, go), xh)) in
                        g.chunks_exact_mut(c).zip(gout.chunks_exact(c)).zip(xhat.chunks_exact(c)).enumerate()
                    {
                        let mut mean_dy = 0.0;
                        let mut mean_dy_xh = 0.0;
                        for i in 0..c {
                            let dy = go[i] * gam[i];
                            mean_dy += dy;
                            mean_dy_xh += dy * xh[i];
                        }
                        mean_dy /= c as f64;
                        mean_dy_xh /= c as f64;
                        for i in 0..c {
                            dst[i] = rstd[r] * (go[i] * gam[i] - mean_dy - xh[i] * mean_dy_xh);
                        }
                    }
                    acc(grads, *x, &g);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut start = 0;
                for p in parts {
                    let c = val(*p).cols();
                    if wants(*p) {
                        let mut g = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            g.extend_from_slice(&gout[r * total + start..r * total + start + c]);
                        }
                        acc(grads, *p, &g);
                    }
                    start += c;
                }
            }
            Op::SliceCols { a, start } => {
                let ta = val(*a);
                let (rows, c) = (ta.rows(), ta.cols());
                let len = node.value.cols();
                let mut g = vec![0.0; rows * c];
                for r in 0..rows {
                    g[r * c + start..r * c + start + len].copy_from_slice(&gout[r * len..(r + 1) * len]);
                }
                acc(grads, *a, &g);
            }
            Op::GatherRows { a, idx } => {
                let ta = val(*a);
                let c = ta.cols();
                let mut g = vec![0.0; ta.len()];
                for (i, &src) in idx.iter().enumerate() {
                    for (d, s) in g[src * c..(src + 1) * c].iter_mut().zip(&gout[i * c..(i + 1) * c]) {
                        *d += s;
                    }
                }
                acc(grads, *a, &g);
            }
            Op::MergeRows { parts } => {
                let c = node.value.cols();
                for (v, idx) in parts {
                    if !wants(*v) {
                        continue;
                    }
                    let mut g = Vec::with_capacity(idx.len() * c);
                    for &dst in idx {
                        g.extend_from_slice(&gout[dst * c..(dst + 1) * c]);
                    }
                    acc(grads, *v, &g);
                }
            }
            Op::RepeatRows { a, times } => {
                let ta = val(*a);
                let c = ta.cols();
                let mut g = vec![0.0; ta.len()];
                for (r, row) in gout.chunks_exact(c).enumerate() {
                    let src = r / times;
                    for (d, s) in g[src * c..(src + 1) * c].iter_mut().zip(row) {
                        *d += s;
                    }
                }
                acc(grads, *a, &g);
            }
            Op::GroupMeanRows { a, group } => {
                let ta = val(*a);
                let c = ta.cols();
                let mut g = vec![0.0; ta.len()];
                for (r, dst) in g.chunks_exact_mut(c).enumerate() {
                    let src = &gout[(r / group) * c..(r / group + 1) * c];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s / *group as f64;
                    }
                }
                acc(grads, *a, &g);
            }
            Op::Reshape(a) => acc(grads, *a, gout),
            Op::Sum(a) => {
                let g = vec![gout[0]; val(*a).len()];
                acc(grads, *a, &g);
            }
            Op::Logit { a, eps } => {
                let g: Vec<f64> = gout
                    .iter()
                    .zip(val(*a).data())
                    .map(|(g, &x)| if x < *eps || x > 1.0 - eps { 0.0 } else { g / (x * (1.0 - x)) })
                    .collect();
                acc(grads, *a, &g);
            }
            Op::PosEnc2d { pts } => {
                let tp = val(*pts);
                let dim = node.value.cols();
                let half = dim / 2;
                let mut g = vec![0.0; tp.len()];
                for r in 0..tp.rows() {
                    for axis in 0..2 {
                        let coord = tp.row(r)[axis];
                        let go = &gout[r * dim + axis * half..r * dim + (axis + 1) * half];
                        g[r * 2 + axis] += pe_grad(coord, go);
                    }
                }
                acc(grads, *pts, &g);
            }
            Op::PolarPoints { refs, delta, radii, k, clamped } => {
                let n = val(*refs).rows();
                let k = *k;
                let mut gr = vec![0.0; n * 2];
                let mut gd = vec![0.0; n * 2];
                let mut grad_r = vec![0.0; n * (k - 1)];
                for i in 0..n {
                    for j in 0..k {
                        let base = (i * k + j) * 2;
                        let gx = if clamped[base] { 0.0 } else { gout[base] };
                        let gy = if clamped[base + 1] { 0.0 } else { gout[base + 1] };
                        gr[i * 2] += gx;
                        gr[i * 2 + 1] += gy;
                        if j + 1 == k {
                            gd[i * 2] += gx;
                            gd[i * 2 + 1] += gy;
                        } else {
                            let ang = TAU * j as f64 / (k - 1) as f64;
                            grad_r[i * (k - 1) + j] += gx * ang.cos() + gy * ang.sin();
                        }
                    }
                }
                for (v, g) in [(*refs, gr), (*delta, gd), (*radii, grad_r)] {
                    if wants(v) {
                        acc(grads, v, &g);
                    }
                }
            }
            Op::Attention { q, k, v, heads, group, probs } => {
                let (n, d) = (node.value.rows(), node.value.cols());
                let (gq, gk, gv) = kernels::attention_backward(
                    val(*q).data(),
                    val(*k).data(),
                    val(*v).data(),
                    probs,
                    gout,
                    n,
                    d,
                    *heads,
                    *group,
                );
                for (var, g) in [(*q, gq), (*k, gk), (*v, gv)] {
                    if wants(var) {
                        acc(grads, var, &g);
                    }
                }
            }
            Op::Deform(c) => {
                let dims = kernels::DeformDims {
                    n: val(c.refs).rows(),
                    d: val(c.value).cols(),
                    map_h: c.map_h,
                    map_w: c.map_w,
                    heads: c.heads,
                    points: c.points,
                };
                let g = kernels::deform_backward(
                    val(c.value).data(),
                    val(c.refs).data(),
                    val(c.offsets).data(),
                    val(c.weights).data(),
                    gout,
                    &dims,
                );
                for (var, gbuf) in
                    [(c.value, g.value), (c.refs, g.refs), (c.offsets, g.offsets), (c.weights, g.weights)]
                {
                    if wants(var) {
                        acc(grads, var, &gbuf);
                    }
                }
            }
            Op::Custom { inputs, backward } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let gs = backward(&ins, &node.value, gout);
                for (v, g) in inputs.iter().zip(gs) {
                    if wants(*v) {
                        acc(grads, *v, &g);
                    }
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(buf) => {
            for (b, x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Writes the interleaved sin/cos encoding of one normalized coordinate.
/// Frequencies follow `10000^(2i / len)` over the coordinate scaled by `2 pi`.
pub(crate) fn write_pe(coord: f64, out: &mut [f64]) {
    let len = out.len();
    let scaled = coord * TAU;
    for i in 0..len / 2 {
        let freq = 10000f64.powf(2.0 * i as f64 / len as f64);
        let (s, c) = (scaled / freq).sin_cos();
        out[2 * i] = s;
        out[2 * i + 1] = c;
    }
}

fn pe_grad(coord: f64, gout: &[f64]) -> f64 {
    let len = gout.len();
    let scaled = coord * TAU;
    let mut g = 0.0;
    for i in 0..len / 2 {
        let freq = 10000f64.powf(2.0 * i as f64 / len as f64);
        let (s, c) = (scaled / freq).sin_cos();
        let dscaled = TAU / freq;
        g += gout[2 * i] * c * dscaled - gout[2 * i + 1] * s * dscaled;
    }
    g
}

/// Sinusoidal encoding of a normalized coordinate into `dim` values.
pub fn sinusoidal_pe(coord: f64, dim: usize) -> Result<Vec<f64>, NnError> {
    if dim % 2 != 0 || dim == 0 {
        return Err(NnError::OddDimension(dim));
    }
    let mut out = vec![0.0; dim];
    write_pe(coord, &mut out);
    Ok(out)
}
