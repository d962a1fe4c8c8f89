//! Desk-scale oriented DETR.
//!
//! Pipeline: patch-embedding feature map, top-N object query selection,
//! conversion of each object query into `K` point queries, a stack of points
//! decoder layers and a shared prediction head. Point coordinates are
//! normalized to `[0, 1]` over a square input.

mod checkpoint;

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Image;
use crate::geometry::Point;
use crate::nn::{
    AttentionConfig, DeformableAttention, FeedForward, Graph, LayerNorm, Linear, Mlp, MultiHeadAttention, NnError,
    ParamStore, Tensor, Var,
};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_HEADER};

/// Clamp used when mapping reference points back to logit space.
const LOGIT_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input {height}x{width} smaller than patch size {patch}")]
    TooSmallInput { height: usize, width: usize, patch: usize },
    #[error("input has {got} channels, model expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("feature map has {cells} cells, fewer than {queries} queries")]
    NotEnoughCells { cells: usize, queries: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Points per object; the last one is the center.
    pub k: usize,
    /// Object queries per image.
    pub n_queries: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub n_classes: usize,
    pub n_bins: usize,
    pub attention: AttentionConfig,
    pub ffn_dim: usize,
    pub patch_size: usize,
    pub in_channels: usize,
    /// Adds one self-attention layer over the feature map.
    pub encoder_layer: bool,
    pub use_point_queries: bool,
    pub use_group_self_attention: bool,
    pub use_decoupled_cross_attention: bool,
    /// Disables the axis head; decoding assumes horizontal boxes.
    pub fixed_axis_mode: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 13,
            n_queries: 30,
            dim: 64,
            n_layers: 2,
            n_classes: 3,
            n_bins: 360,
            attention: AttentionConfig::default(),
            ffn_dim: 128,
            patch_size: 8,
            in_channels: 3,
            encoder_layer: false,
            use_point_queries: true,
            use_group_self_attention: true,
            use_decoupled_cross_attention: true,
            fixed_axis_mode: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.k < 5 {
            return bad(format!("k must be >= 5, got {}", self.k));
        }
        if self.n_queries == 0 || self.n_layers == 0 || self.n_classes == 0 || self.patch_size == 0 {
            return bad("n_queries, n_layers, n_classes and patch_size must be positive".into());
        }
        if self.dim == 0 || self.dim % 4 != 0 {
            return bad(format!("dim must be a positive multiple of 4, got {}", self.dim));
        }
        if self.attention.dim != self.dim {
            return bad(format!("attention dim {} differs from model dim {}", self.attention.dim, self.dim));
        }
        self.attention.validate()?;
        if !self.fixed_axis_mode && (self.n_bins < 8 || self.n_bins % 4 != 0) {
            return bad(format!("n_bins must be >= 8 and divisible by 4, got {}", self.n_bins));
        }
        if self.use_group_self_attention && !self.use_point_queries {
            return bad("group self-attention requires point queries".into());
        }
        if self.use_decoupled_cross_attention && !self.use_point_queries {
            return bad("decoupled cross-attention requires point queries".into());
        }
        Ok(())
    }

    /// Length of the axis logits, zero in fixed-axis mode.
    pub fn axis_len(&self) -> usize {
        if self.fixed_axis_mode {
            0
        } else {
            self.n_bins
        }
    }
}

/// Object queries selected from the feature map, as graph nodes.
#[derive(Debug, Clone)]
pub struct ObjectQueries {
    /// `(N, dim)` content embeddings.
    pub content: Var,
    /// `(N, 2)` normalized cell centers.
    pub refs: Var,
    pub scores: Vec<f64>,
    /// Selected cell indices, row-major.
    pub cells: Vec<usize>,
}

/// `N * K` point queries grouped by owner; row `i * K + j` is slot `j` of
/// owner `i`, and slot `K - 1` is the center.
#[derive(Debug, Clone)]
pub struct PointQueries {
    pub content: Var,
    pub pos: Var,
    /// `(N * K, 2)` current reference positions.
    pub refs: Var,
    pub n_owners: usize,
    pub k: usize,
}

/// Feature map produced by the backbone stand-in.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMap {
    /// `(map_h * map_w, dim)`
    pub features: Var,
    pub map_h: usize,
    pub map_w: usize,
}

/// Per-layer head outputs as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    /// `(N * K, 2)`
    pub points: Var,
    /// `(N, n_bins)`, absent in fixed-axis mode.
    pub axis: Option<Var>,
    /// `(N, n_classes)`
    pub class: Var,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub layers: Vec<LayerOutput>,
    /// `(map_h * map_w, n_classes)` cell scores used for query selection.
    pub cell_logits: Var,
    pub feature: FeatureMap,
    pub queries: ObjectQueries,
}

/// One instance prediction in plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSetPrediction {
    pub points: Vec<Point>,
    pub axis_logits: Vec<f64>,
    pub class_logits: Vec<f64>,
}

impl PointSetPrediction {
    pub fn as_ref(&self) -> crate::loss::PredictionRef<'_> {
        crate::loss::PredictionRef {
            points: &self.points,
            axis_logits: &self.axis_logits,
            class_logits: &self.class_logits,
        }
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ffn: FeedForward,
    norm2: LayerNorm,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    /// Point-to-point attention, or global attention without grouping.
    self_attn: MultiHeadAttention,
    norm_self: LayerNorm,
    /// Object-to-object attention over center queries.
    obj_attn: Option<(MultiHeadAttention, LayerNorm)>,
    /// Cross-attention for boundary queries (or all queries when shared).
    cross: DeformableAttention,
    /// Separate cross-attention for center queries.
    cross_center: Option<DeformableAttention>,
    norm_cross: LayerNorm,
    ffn: FeedForward,
    norm_ffn: LayerNorm,
}

#[derive(Debug, Clone)]
struct Conversion {
    center: Mlp,
    radius: Mlp,
}

#[derive(Debug, Clone)]
pub struct OrientedDetr {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    patch: Linear,
    encoder: Option<EncoderLayer>,
    score: Linear,
    conversion: Option<Conversion>,
    pos: Mlp,
    layers: Vec<DecoderLayer>,
    point_head: Mlp,
    axis_head: Option<Mlp>,
    class_head: Mlp,
}

/// Bias giving an initial foreground probability of 0.01.
fn prior_bias() -> f64 {
    -(99.0f64).ln()
}

fn set_bias(store: &mut ParamStore, lin: &Linear, f: impl Fn(usize) -> f64) {
    for (i, v) in store.value_mut(lin.b).data_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

fn scale_weights(store: &mut ParamStore, lin: &Linear, s: f64) {
    for v in store.value_mut(lin.w).data_mut() {
        *v *= s;
    }
}

impl OrientedDetr {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, k) = (cfg.dim, cfg.k);
        let att = cfg.attention;
        let rng = &mut rng;

        let patch_in = cfg.patch_size * cfg.patch_size * cfg.in_channels;
        let patch = Linear::new(&mut store, "backbone.patch", patch_in, d, rng);
        let encoder = cfg.encoder_layer.then(|| EncoderLayer {
            attn: MultiHeadAttention::new(&mut store, "encoder.attn", &att, rng),
            norm1: LayerNorm::new(&mut store, "encoder.norm1", d),
            ffn: FeedForward::new(&mut store, "encoder.ffn", d, cfg.ffn_dim, rng),
            norm2: LayerNorm::new(&mut store, "encoder.norm2", d),
        });
        let score = Linear::new(&mut store, "select.score", d, cfg.n_classes, rng);
        set_bias(&mut store, &score, |_| prior_bias());

        let conversion = cfg.use_point_queries.then(|| {
            let center = Mlp::new(&mut store, "convert.center", &[d, d, 2], rng);
            scale_weights(&mut store, center.last(), 0.01);
            set_bias(&mut store, center.last(), |_| 0.0);
            let radius = Mlp::new(&mut store, "convert.radius", &[d, d, k - 1], rng);
            scale_weights(&mut store, radius.last(), 0.01);
            set_bias(&mut store, radius.last(), |_| 0.05);
            Conversion { center, radius }
        });
        let pos = Mlp::new(&mut store, "pos", &[d, d, d], rng);

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("decoder.{l}");
            let grouped = cfg.use_point_queries && cfg.use_group_self_attention;
            layers.push(DecoderLayer {
                self_attn: MultiHeadAttention::new(&mut store, &format!("{p}.self_attn"), &att, rng),
                norm_self: LayerNorm::new(&mut store, &format!("{p}.norm_self"), d),
                obj_attn: grouped.then(|| {
                    (
                        MultiHeadAttention::new(&mut store, &format!("{p}.obj_attn"), &att, rng),
                        LayerNorm::new(&mut store, &format!("{p}.norm_obj"), d),
                    )
                }),
                cross: DeformableAttention::new(&mut store, &format!("{p}.cross"), &att, rng),
                cross_center: cfg
                    .use_decoupled_cross_attention
                    .then(|| DeformableAttention::new(&mut store, &format!("{p}.cross_center"), &att, rng)),
                norm_cross: LayerNorm::new(&mut store, &format!("{p}.norm_cross"), d),
                ffn: FeedForward::new(&mut store, &format!("{p}.ffn"), d, cfg.ffn_dim, rng),
                norm_ffn: LayerNorm::new(&mut store, &format!("{p}.norm_ffn"), d),
            });
        }

        let point_out = if cfg.use_point_queries { 2 } else { 2 * k };
        let point_head = Mlp::new(&mut store, "head.points", &[d, d, point_out], rng);
        scale_weights(&mut store, point_head.last(), 0.0);
        if !cfg.use_point_queries {
            // spread the initial points on a ring in logit space
            set_bias(&mut store, point_head.last(), |i| {
                let j = i / 2;
                if j + 1 == k {
                    return 0.0;
                }
                let ang = TAU * j as f64 / (k - 1) as f64;
                0.2 * if i % 2 == 0 { ang.cos() } else { ang.sin() }
            });
        }
        let axis_head = (!cfg.fixed_axis_mode).then(|| Mlp::new(&mut store, "head.axis", &[d, d, cfg.n_bins], rng));
        let class_head = Mlp::new(&mut store, "head.class", &[d, d, cfg.n_classes], rng);
        set_bias(&mut store, class_head.last(), |_| prior_bias());

        Ok(Self { cfg, store, patch, encoder, score, conversion, pos, layers, point_head, axis_head, class_head })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Patch embedding plus 2D sinusoidal positions, optionally followed by
    /// one encoder layer.
    pub fn backbone_stub(&self, g: &mut Graph, image: &Image) -> Result<FeatureMap, ModelError> {
        let p = self.cfg.patch_size;
        if image.height < p || image.width < p {
            return Err(ModelError::TooSmallInput { height: image.height, width: image.width, patch: p });
        }
        if image.channels != self.cfg.in_channels {
            return Err(ModelError::ChannelMismatch { expected: self.cfg.in_channels, got: image.channels });
        }
        let (mh, mw) = (image.height / p, image.width / p);
        let c = image.channels;
        let mut patches = Vec::with_capacity(mh * mw * p * p * c);
        for r in 0..mh {
            for q in 0..mw {
                for dy in 0..p {
                    for dx in 0..p {
                        patches.extend_from_slice(image.pixel(r * p + dy, q * p + dx));
                    }
                }
            }
        }
        let x = g.constant(Tensor::new(&[mh * mw, p * p * c], patches)?);
        let emb = self.patch.forward(g, &self.store, x)?;
        let centers = g.constant(cell_centers(mh, mw));
        let pe = g.pos_enc_2d(centers, self.cfg.dim)?;
        let mut feat = g.add(emb, pe)?;
        if let Some(enc) = &self.encoder {
            let a = enc.attn.forward(g, &self.store, feat, Some(pe), mh * mw)?;
            let h = g.add(feat, a)?;
            let h = enc.norm1.forward(g, &self.store, h)?;
            let f = enc.ffn.forward(g, &self.store, h)?;
            let h2 = g.add(h, f)?;
            feat = enc.norm2.forward(g, &self.store, h2)?;
        }
        Ok(FeatureMap { features: feat, map_h: mh, map_w: mw })
    }

    /// Scores every cell and keeps the top `N` in descending order; ties go to
    /// the lower row-major index.
    pub fn select_object_queries(&self, g: &mut Graph, fm: &FeatureMap) -> Result<(ObjectQueries, Var), ModelError> {
        let cells = fm.map_h * fm.map_w;
        let n = self.cfg.n_queries;
        if cells < n {
            return Err(ModelError::NotEnoughCells { cells, queries: n });
        }
        let logits = self.score.forward(g, &self.store, fm.features)?;
        let t = g.value(logits);
        let scores: Vec<f64> = (0..cells).map(|c| t.row(c).iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let order = top_n_indices(&scores, n);
        let content = g.gather_rows(fm.features, &order)?;
        let all_centers = cell_centers(fm.map_h, fm.map_w);
        let refs: Vec<Vec<f64>> = order.iter().map(|&c| all_centers.row(c).to_vec()).collect();
        let refs = g.constant(Tensor::from_rows(&refs)?);
        let sel_scores = order.iter().map(|&c| scores[c]).collect();
        Ok((ObjectQueries { content, refs, scores: sel_scores, cells: order }, logits))
    }

    /// Turns each object query into `K` point queries: `K - 1` boundary
    /// points on predicted radii at fixed equidistant angles plus a center
    /// at a predicted offset. All share the object content.
    pub fn object_to_point_conversion(&self, g: &mut Graph, obj: &ObjectQueries) -> Result<PointQueries, ModelError> {
        let k = self.cfg.k;
        let n = g.value(obj.content).rows();
        let conv =
            self.conversion.as_ref().ok_or_else(|| ModelError::InvalidConfig("point queries are disabled".into()))?;
        let delta = conv.center.forward(g, &self.store, obj.content)?;
        let radii = conv.radius.forward(g, &self.store, obj.content)?;
        let refs = g.polar_points(obj.refs, delta, radii, k)?;
        let pos = self.positional(g, refs)?;
        let content = g.repeat_rows(obj.content, k);
        Ok(PointQueries { content, pos, refs, n_owners: n, k })
    }

    fn positional(&self, g: &mut Graph, refs: Var) -> Result<Var, ModelError> {
        let pe = g.pos_enc_2d(refs, self.cfg.dim)?;
        Ok(self.pos.forward(g, &self.store, pe)?)
    }

    /// One points decoder layer. Returns the updated content.
    pub fn points_decoder_layer(
        &self,
        g: &mut Graph,
        layer: usize,
        pq: &PointQueries,
        fm: &FeatureMap,
    ) -> Result<Var, ModelError> {
        let lay = &self.layers[layer];
        let st = &self.store;
        let (n, k) = (pq.n_owners, pq.k);
        let rows = g.value(pq.content).rows();
        if rows != n * k {
            return Err(NnError::GroupSizeMismatch { rows, group: k }.into());
        }
        let grouped = lay.obj_attn.is_some();
        let group = if grouped { k } else { rows };
        let a = lay.self_attn.forward(g, st, pq.content, Some(pq.pos), group)?;
        let x = g.add(pq.content, a)?;
        let mut x = lay.norm_self.forward(g, st, x)?;

        let (center_idx, boundary_idx) = slot_indices(n, k);
        if let Some((attn, norm)) = &lay.obj_attn {
            let xc = g.gather_rows(x, &center_idx)?;
            let pc = g.gather_rows(pq.pos, &center_idx)?;
            let a = attn.forward(g, st, xc, Some(pc), n)?;
            let xc2 = g.add(xc, a)?;
            let xc2 = norm.forward(g, st, xc2)?;
            let xb = g.gather_rows(x, &boundary_idx)?;
            x = g.merge_rows(&[(xc2, center_idx.clone()), (xb, boundary_idx.clone())], rows)?;
        }

        let q = g.add(x, pq.pos)?;
        let a = match &lay.cross_center {
            Some(center_mod) => {
                let qc = g.gather_rows(q, &center_idx)?;
                let rc = g.gather_rows(pq.refs, &center_idx)?;
                let vc = center_mod.project_value(g, st, fm.features)?;
                let ac = center_mod.forward(g, st, qc, rc, vc, fm.map_h, fm.map_w)?;
                let qb = g.gather_rows(q, &boundary_idx)?;
                let rb = g.gather_rows(pq.refs, &boundary_idx)?;
                let vb = lay.cross.project_value(g, st, fm.features)?;
                let ab = lay.cross.forward(g, st, qb, rb, vb, fm.map_h, fm.map_w)?;
                g.merge_rows(&[(ac, center_idx), (ab, boundary_idx)], rows)?
            }
            None => {
                let v = lay.cross.project_value(g, st, fm.features)?;
                lay.cross.forward(g, st, q, pq.refs, v, fm.map_h, fm.map_w)?
            }
        };
        let x2 = g.add(x, a)?;
        let x = lay.norm_cross.forward(g, st, x2)?;
        let f = lay.ffn.forward(g, st, x)?;
        let x2 = g.add(x, f)?;
        Ok(lay.norm_ffn.forward(g, st, x2)?)
    }

    /// Maps each point query to a point around its reference and the pooled
    /// group content to axis and class logits.
    pub fn prediction_head(&self, g: &mut Graph, content: Var, refs: Var) -> Result<LayerOutput, ModelError> {
        let k = self.cfg.k;
        let off = self.point_head.forward(g, &self.store, content)?;
        let base = g.logit(refs, LOGIT_EPS);
        let z = g.add(base, off)?;
        let points = g.sigmoid(z);
        let pooled = g.group_mean_rows(content, k)?;
        self.object_heads(g, pooled, points)
    }

    fn object_heads(&self, g: &mut Graph, pooled: Var, points: Var) -> Result<LayerOutput, ModelError> {
        let axis = match &self.axis_head {
            Some(h) => Some(h.forward(g, &self.store, pooled)?),
            None => None,
        };
        let class = self.class_head.forward(g, &self.store, pooled)?;
        Ok(LayerOutput { points, axis, class })
    }

    /// Full forward pass; returns the outputs of every decoder layer.
    pub fn forward(&self, g: &mut Graph, image: &Image) -> Result<ForwardOutput, ModelError> {
        if image.height != image.width {
            return Err(ModelError::InvalidConfig(format!(
                "model expects square inputs, got {}x{}",
                image.height, image.width
            )));
        }
        let fm = self.backbone_stub(g, image)?;
        let (queries, cell_logits) = self.select_object_queries(g, &fm)?;
        let layers = if self.cfg.use_point_queries {
            self.forward_points(g, &fm, &queries)?
        } else {
            self.forward_baseline(g, &fm, &queries)?
        };
        Ok(ForwardOutput { layers, cell_logits, feature: fm, queries })
    }

    fn forward_points(
        &self,
        g: &mut Graph,
        fm: &FeatureMap,
        obj: &ObjectQueries,
    ) -> Result<Vec<LayerOutput>, ModelError> {
        let mut pq = self.object_to_point_conversion(g, obj)?;
        let mut outs = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let content = self.points_decoder_layer(g, l, &pq, fm)?;
            let out = self.prediction_head(g, content, pq.refs)?;
            outs.push(out);
            if l + 1 < self.layers.len() {
                let refs = g.detach(out.points);
                let pos = self.positional(g, refs)?;
                pq = PointQueries { content, pos, refs, ..pq };
            }
        }
        Ok(outs)
    }

    /// Object queries predict all `K` points directly, without point queries.
    fn forward_baseline(
        &self,
        g: &mut Graph,
        fm: &FeatureMap,
        obj: &ObjectQueries,
    ) -> Result<Vec<LayerOutput>, ModelError> {
        let k = self.cfg.k;
        let st = &self.store;
        let n = g.value(obj.content).rows();
        let mut x = obj.content;
        let mut refs = obj.refs;
        let mut outs = Vec::with_capacity(self.layers.len());
        for (l, lay) in self.layers.iter().enumerate() {
            let pos = self.positional(g, refs)?;
            let a = lay.self_attn.forward(g, st, x, Some(pos), n)?;
            let h = g.add(x, a)?;
            let h = lay.norm_self.forward(g, st, h)?;
            let q = g.add(h, pos)?;
            let v = lay.cross.project_value(g, st, fm.features)?;
            let a = lay.cross.forward(g, st, q, refs, v, fm.map_h, fm.map_w)?;
            let h2 = g.add(h, a)?;
            let h = lay.norm_cross.forward(g, st, h2)?;
            let f = lay.ffn.forward(g, st, h)?;
            let h2 = g.add(h, f)?;
            x = lay.norm_ffn.forward(g, st, h2)?;

            let off = self.point_head.forward(g, st, x)?;
            let off = g.reshape(off, &[n * k, 2])?;
            let rep = g.repeat_rows(refs, k);
            let base = g.logit(rep, LOGIT_EPS);
            let z = g.add(base, off)?;
            let points = g.sigmoid(z);
            let out = self.object_heads(g, x, points)?;
            outs.push(out);
            if l + 1 < self.layers.len() {
                let (center_idx, _) = slot_indices(n, k);
                let c = g.gather_rows(points, &center_idx)?;
                refs = g.detach(c);
            }
        }
        Ok(outs)
    }

    /// Reads one layer's outputs back as plain predictions.
    pub fn predictions(&self, g: &Graph, out: &LayerOutput) -> Vec<PointSetPrediction> {
        let k = self.cfg.k;
        let pts = g.value(out.points);
        let cls = g.value(out.class);
        let n = cls.rows();
        (0..n)
            .map(|i| PointSetPrediction {
                points: (0..k)
                    .map(|j| {
                        let r = pts.row(i * k + j);
                        Point::new(r[0], r[1])
                    })
                    .collect(),
                axis_logits: out.axis.map(|a| g.value(a).row(i).to_vec()).unwrap_or_default(),
                class_logits: cls.row(i).to_vec(),
            })
            .collect()
    }
}

/// Normalized centers of a `map_h x map_w` grid, row-major.
pub fn cell_centers(map_h: usize, map_w: usize) -> Tensor {
    let mut data = Vec::with_capacity(map_h * map_w * 2);
    for r in 0..map_h {
        for c in 0..map_w {
            data.push((c as f64 + 0.5) / map_w as f64);
            data.push((r as f64 + 0.5) / map_h as f64);
        }
    }
    Tensor::new(&[map_h * map_w, 2], data).expect("shape")
}

/// Indices of the `n` largest scores, descending, lower index first on ties.
pub fn top_n_indices(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// Row indices of center slots and boundary slots for `n` groups of `k`.
pub fn slot_indices(n: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    let centers = (0..n).map(|i| i * k + k - 1).collect();
    let boundary = (0..n).flat_map(|i| (0..k - 1).map(move |j| i * k + j)).collect();
    (centers, boundary)
}
