//! Parameterized building blocks on top of [`Graph`].

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, NnError, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = store.add_uniform(format!("{name}.weight"), &[in_dim, out_dim], bound, rng);
        let b = store.add_uniform(format!("{name}.bias"), &[out_dim], bound, rng);
        Self { w, b, in_dim, out_dim }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = store.add(format!("{name}.weight"), Tensor::zeros(&[in_dim, out_dim]));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, Some(b))
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("mlp has layers")
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, Self::EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub dim: usize,
    pub n_heads: usize,
    /// Deformable sampling points per head.
    pub n_sample_points: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { dim: 64, n_heads: 4, n_sample_points: 4 }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.dim == 0 || self.n_heads == 0 || self.n_sample_points == 0 || self.dim % self.n_heads != 0 {
            return Err(NnError::InvalidConfig(format!(
                "attention dim {} must be a positive multiple of n_heads {} and n_sample_points must be positive",
                self.dim, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Multi-head self-attention with learned query/key/value/output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &AttentionConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.dim;
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            out: Linear::new(store, &format!("{name}.out"), d, d, rng),
            heads: cfg.n_heads,
        }
    }

    /// Self-attention over `x: (n, dim)` within consecutive blocks of
    /// `group` rows. `pos`, when given, is added to queries and keys only.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        pos: Option<Var>,
        group: usize,
    ) -> Result<Var, NnError> {
        let qk_in = match pos {
            Some(p) => g.add(x, p)?,
            None => x,
        };
        let q = self.q.forward(g, store, qk_in)?;
        let k = self.k.forward(g, store, qk_in)?;
        let v = self.v.forward(g, store, x)?;
        let a = g.attention(q, k, v, self.heads, group)?;
        self.out.forward(g, store, a)
    }
}

/// Single-scale deformable cross-attention.
#[derive(Debug, Clone)]
pub struct DeformableAttention {
    pub offsets: Linear,
    pub weights: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
    pub points: usize,
}

impl DeformableAttention {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &AttentionConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.dim;
        let (h, p) = (cfg.n_heads, cfg.n_sample_points);
        // sampling offsets start on a small ring per head, weights near zero
        let bound = 0.01 / (d as f64).sqrt();
        let w = store.add_uniform(format!("{name}.offsets.weight"), &[d, h * p * 2], bound, rng);
        let mut bias = Vec::with_capacity(h * p * 2);
        for a in 0..h {
            let dir = TAU * a as f64 / h as f64;
            for s in 0..p {
                let r = 0.5 * (s + 1) as f64;
                bias.push(r * dir.cos());
                bias.push(r * dir.sin());
            }
        }
        let b = store.add(format!("{name}.offsets.bias"), Tensor::new(&[h * p * 2], bias).expect("shape"));
        let offsets = Linear { w, b, in_dim: d, out_dim: h * p * 2 };
        Self {
            offsets,
            weights: Linear::new(store, &format!("{name}.attn"), d, h * p, rng),
            value: Linear::new(store, &format!("{name}.value"), d, d, rng),
            out: Linear::new(store, &format!("{name}.out"), d, d, rng),
            heads: h,
            points: p,
        }
    }

    /// Value projection of a `(H * W, dim)` feature map; reusable across query sets.
    pub fn project_value(&self, g: &mut Graph, store: &ParamStore, feature_map: Var) -> Result<Var, NnError> {
        self.value.forward(g, store, feature_map)
    }

    /// Attends `query: (n, dim)` at normalized reference points `refs: (n, 2)`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query: Var,
        refs: Var,
        value: Var,
        map_h: usize,
        map_w: usize,
    ) -> Result<Var, NnError> {
        let n = g.value(query).rows();
        let offsets = self.offsets.forward(g, store, query)?;
        let logits = self.weights.forward(g, store, query)?;
        let logits = g.reshape(logits, &[n * self.heads, self.points])?;
        let weights = g.softmax_rows(logits);
        let weights = g.reshape(weights, &[n, self.heads * self.points])?;
        let sampled = g.deform_sample(value, refs, offsets, weights, map_h, map_w, self.heads, self.points)?;
        self.out.forward(g, store, sampled)
    }
}

/// Residual feed-forward block body: `Linear -> ReLU -> Linear`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub mlp: Mlp,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self { mlp: Mlp::new(store, name, &[dim, hidden, dim], rng) }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        self.mlp.forward(g, store, x)
    }
}
