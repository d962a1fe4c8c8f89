//! Training and evaluation of [`OrientedDetr`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::axis::AxisCodecConfig;
use crate::data::{Annotation, DataError, Image, MetricsRecord, RunConfig, Scene};
use crate::eval::{average_precision, ApProtocol, ApReport, DetectionRecord, GroundTruthRecord};
use crate::geometry::{
    decode_point_axis, quad_to_obb, quad_to_point_axis_target, GeometryError, OrientedBox, Point, Quad,
};
use crate::loss::{classification_loss, point_axis_loss, sigmoid, ClassedTarget, LossConfig, LossError, PredictionRef};
use crate::matching::{match_predictions, MatchingError};
use crate::model::{ForwardOutput, ModelError, OrientedDetr};
use crate::nn::{Graph, ParamStore, Tensor, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, step {step} (image {image})")]
    NonFiniteLoss { epoch: usize, step: usize, image: String },
    #[error("unknown category {category:?} in {image}")]
    UnknownCategory { image: String, category: String },
    #[error("image {image}: {source}")]
    Target { image: String, source: GeometryError },
    #[error("images must be square, {image} is {height}x{width}")]
    NonSquare { image: String, height: usize, width: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// A scene with targets in normalized coordinates.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub scene: Scene,
    pub targets: Vec<ClassedTarget>,
}

/// Normalizes annotations by the (square) image side. Difficult objects are
/// not used as training targets.
pub fn prepare_sample(scene: &Scene, classes: &[String], codec: &AxisCodecConfig) -> Result<TrainSample, TrainError> {
    let img = &scene.image;
    if img.height != img.width {
        return Err(TrainError::NonSquare { image: scene.id.clone(), height: img.height, width: img.width });
    }
    let s = 1.0 / img.width as f64;
    let mut targets = Vec::new();
    for a in scene.annotations.iter().filter(|a| !a.difficult) {
        let class = classes
            .iter()
            .position(|c| *c == a.category)
            .ok_or_else(|| TrainError::UnknownCategory { image: scene.id.clone(), category: a.category.clone() })?;
        let quad = Quad::new(a.quad.corners.map(|p| p * s));
        let target = quad_to_point_axis_target(&quad, codec)
            .map_err(|source| TrainError::Target { image: scene.id.clone(), source })?;
        targets.push(ClassedTarget { target, class });
    }
    Ok(TrainSample { id: scene.id.clone(), scene: scene.clone(), targets })
}

pub fn prepare_samples(
    scenes: &[Scene],
    classes: &[String],
    codec: &AxisCodecConfig,
) -> Result<Vec<TrainSample>, TrainError> {
    scenes.iter().map(|s| prepare_sample(s, classes, codec)).collect()
}

/// One of the eight symmetries of the square: bit 0 transposes, bit 1
/// mirrors x, bit 2 mirrors y. Annotations move with the pixels.
pub fn dihedral_scene(scene: &Scene, t: usize) -> Result<Scene, TrainError> {
    let img = &scene.image;
    if img.height != img.width {
        return Err(TrainError::NonSquare { image: scene.id.clone(), height: img.height, width: img.width });
    }
    let n = img.width;
    let map = |x: f64, y: f64, side: f64| {
        let (x, y) = if t & 1 == 1 { (y, x) } else { (x, y) };
        let x = if t & 2 == 2 { side - x } else { x };
        let y = if t & 4 == 4 { side - y } else { y };
        (x, y)
    };
    let mut out = Image::new(n, n, img.channels);
    for y in 0..n {
        for x in 0..n {
            let (nx, ny) = map(x as f64, y as f64, (n - 1) as f64);
            out.pixel_mut(ny as usize, nx as usize).copy_from_slice(img.pixel(y, x));
        }
    }
    let annotations = scene
        .annotations
        .iter()
        .map(|a| {
            let corners = a.quad.corners.map(|p| {
                let (x, y) = map(p.x, p.y, n as f64);
                Point::new(x, y)
            });
            Annotation { quad: Quad::new(corners), ..a.clone() }
        })
        .collect();
    Ok(Scene { id: scene.id.clone(), image: out, annotations })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLossConfig {
    pub loss: LossConfig,
    /// Supervise every decoder layer instead of only the last.
    pub aux_loss: bool,
    pub select_weight: f64,
}

impl TrainLossConfig {
    pub fn from_run(cfg: &RunConfig) -> Result<Self, TrainError> {
        Ok(Self { loss: cfg.loss_config()?, aux_loss: cfg.aux_loss, select_weight: cfg.select_loss_weight })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean projection loss, summed over supervised layers.
    pub proj: f64,
    pub axis: f64,
    pub cls: f64,
    pub select: f64,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown) {
        self.total += o.total;
        self.proj += o.proj;
        self.axis += o.axis;
        self.cls += o.cls;
        self.select += o.select;
    }

    fn scaled(mut self, s: f64) -> Self {
        self.total *= s;
        self.proj *= s;
        self.axis *= s;
        self.cls *= s;
        self.select *= s;
        self
    }
}

/// Cell class targets: a cell is positive for the class of the first target
/// whose center falls inside it.
pub fn cell_targets(targets: &[ClassedTarget], map_h: usize, map_w: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; map_h * map_w];
    for t in targets {
        let c = t.target.center;
        let col = ((c.x * map_w as f64).floor().max(0.0) as usize).min(map_w - 1);
        let row = ((c.y * map_h as f64).floor().max(0.0) as usize).min(map_h - 1);
        let slot = &mut out[row * map_w + col];
        if slot.is_none() {
            *slot = Some(t.class);
        }
    }
    out
}

/// Output gradients to seed the reverse sweep with.
pub type Seeds = Vec<(Var, Vec<f64>)>;

/// Loss of one forward pass and the seed gradients for its outputs.
pub fn sample_loss(
    model: &OrientedDetr,
    g: &Graph,
    out: &ForwardOutput,
    targets: &[ClassedTarget],
    cfg: &TrainLossConfig,
) -> Result<(LossBreakdown, Seeds), TrainError> {
    let mut seeds = Vec::new();
    let mut total = LossBreakdown::default();
    let n_classes = model.cfg.n_classes;
    let first = if cfg.aux_loss { 0 } else { out.layers.len() - 1 };
    for layer in &out.layers[first..] {
        let preds = model.predictions(g, layer);
        let refs: Vec<PredictionRef<'_>> = preds.iter().map(|p| p.as_ref()).collect();
        if targets.is_empty() {
            let flat: Vec<f64> = preds.iter().flat_map(|p| p.class_logits.iter().copied()).collect();
            let none = vec![None; preds.len()];
            let c = classification_loss(&flat, n_classes, &none, cfg.loss.focal_alpha, cfg.loss.focal_gamma)?;
            let w = cfg.loss.cls_weight;
            total.add(&LossBreakdown { total: w * c.value, cls: c.value, ..Default::default() });
            seeds.push((layer.class, c.grad.iter().map(|v| v * w).collect()));
            continue;
        }
        let assignment = match_predictions(&refs, targets, &cfg.loss)?;
        let l = point_axis_loss(&refs, targets, &assignment, &cfg.loss)?;
        total.add(&LossBreakdown { total: l.value, proj: l.proj, axis: l.axis, cls: l.cls, select: 0.0 });
        seeds.push((layer.points, l.grads.iter().flat_map(|gr| gr.points.iter().copied()).collect()));
        if let Some(axis) = layer.axis {
            seeds.push((axis, l.grads.iter().flat_map(|gr| gr.axis_logits.iter().copied()).collect()));
        }
        seeds.push((layer.class, l.grads.iter().flat_map(|gr| gr.class_logits.iter().copied()).collect()));
    }
    if cfg.select_weight > 0.0 {
        let fm = &out.feature;
        let cell_t = cell_targets(targets, fm.map_h, fm.map_w);
        let logits = g.value(out.cell_logits).data();
        let c = classification_loss(logits, n_classes, &cell_t, cfg.loss.focal_alpha, cfg.loss.focal_gamma)?;
        let w = cfg.select_weight;
        total.add(&LossBreakdown { total: w * c.value, select: c.value, ..Default::default() });
        seeds.push((out.cell_logits, c.grad.iter().map(|v| v * w).collect()));
    }
    Ok((total, seeds))
}

/// Forward pass and loss without any parameter update.
pub fn evaluate_loss(
    model: &OrientedDetr,
    sample: &TrainSample,
    cfg: &TrainLossConfig,
) -> Result<LossBreakdown, TrainError> {
    evaluate_loss_replaying(model, sample, cfg, Vec::new())
}

/// [`evaluate_loss`] with the stop-gradient values of an earlier pass held
/// fixed; see [`Graph::replaying`].
pub fn evaluate_loss_replaying(
    model: &OrientedDetr,
    sample: &TrainSample,
    cfg: &TrainLossConfig,
    detached: Vec<Tensor>,
) -> Result<LossBreakdown, TrainError> {
    let mut g = Graph::replaying(detached);
    let out = model.forward(&mut g, &sample.scene.image)?;
    Ok(sample_loss(model, &g, &out, &sample.targets, cfg)?.0)
}

/// Loss and per-parameter gradients (indexed like the parameter store).
pub fn loss_and_grads(
    model: &OrientedDetr,
    sample: &TrainSample,
    cfg: &TrainLossConfig,
) -> Result<(LossBreakdown, Vec<Vec<f64>>), TrainError> {
    loss_grads_detached(model, sample, cfg).map(|(l, g, _)| (l, g))
}

/// Loss, per-parameter gradients and the values the pass detached.
pub type DetachedPass = (LossBreakdown, Vec<Vec<f64>>, Vec<Tensor>);

/// [`loss_and_grads`] plus the values the pass detached.
pub fn loss_grads_detached(
    model: &OrientedDetr,
    sample: &TrainSample,
    cfg: &TrainLossConfig,
) -> Result<DetachedPass, TrainError> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, &sample.scene.image)?;
    let (loss, seeds) = sample_loss(model, &g, &out, &sample.targets, cfg)?;
    let grads = g.backward(&seeds);
    let mut per_param: Vec<Vec<f64>> = model.store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
    for &(id, var) in g.bound_params() {
        if let Some(gr) = grads.get(var) {
            per_param[id.index()].copy_from_slice(gr);
        }
    }
    Ok((loss, per_param, g.detached_values().to_vec()))
}

/// Adam with decoupled weight decay. Decay applies to weight matrices only.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    decay: Vec<bool>,
    t: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            decay: store.iter().map(|(_, p)| p.name.ends_with(".weight")).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let decay = if self.decay[i] { lr * self.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in store.value_mut(id).data_mut().iter_mut().enumerate() {
                let gj = grads[i][j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= decay * *w + lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Scales gradients so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Step schedule: `lr * factor^(number of decay epochs <= epoch)`.
pub fn learning_rate(cfg: &RunConfig, epoch: usize) -> f64 {
    let drops = cfg.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.learning_rate * cfg.lr_decay_factor.powi(drops as i32)
}

/// Decoded detection in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class: usize,
    pub score: f64,
    pub rect: OrientedBox,
    pub points: Vec<Point>,
}

/// Runs inference and decodes every query of the last layer scoring above
/// `threshold`.
pub fn detect(
    model: &OrientedDetr,
    scene: &Scene,
    codec: &AxisCodecConfig,
    threshold: f64,
) -> Result<Vec<Detection>, TrainError> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, &scene.image)?;
    let last = out.layers.last().expect("at least one layer");
    let scale = scene.image.width as f64;
    let mut dets = Vec::new();
    for p in model.predictions(&g, last) {
        let (class, logit) = p.class_logits.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |best, (c, z)| {
            if z > best.1 {
                (c, z)
            } else {
                best
            }
        });
        let score = sigmoid(logit);
        if score < threshold {
            continue;
        }
        let points: Vec<Point> = p.points.iter().map(|q| *q * scale).collect();
        let Ok(rect) = decode_point_axis(&points, &p.axis_logits, codec) else { continue };
        dets.push(Detection { class, score, rect, points });
    }
    Ok(dets)
}

pub fn detection_records(
    model: &OrientedDetr,
    scenes: &[Scene],
    classes: &[String],
    codec: &AxisCodecConfig,
    threshold: f64,
    threads: usize,
) -> Result<Vec<DetectionRecord>, TrainError> {
    let per_scene = parallel_map(scenes, threads, |s| detect(model, s, codec, threshold))?;
    let mut out = Vec::new();
    for (scene, dets) in scenes.iter().zip(per_scene) {
        out.extend(dets.into_iter().map(|d| DetectionRecord {
            image_id: scene.id.clone(),
            class: classes[d.class].clone(),
            score: d.score,
            bbox: d.rect,
        }));
    }
    Ok(out)
}

pub fn ground_truth_records(scenes: &[Scene]) -> Result<Vec<GroundTruthRecord>, TrainError> {
    let mut out = Vec::new();
    for s in scenes {
        for a in &s.annotations {
            let bbox = quad_to_obb(&a.quad).map_err(|source| TrainError::Target { image: s.id.clone(), source })?;
            out.push(GroundTruthRecord {
                image_id: s.id.clone(),
                class: a.category.clone(),
                bbox,
                difficult: a.difficult,
            });
        }
    }
    Ok(out)
}

/// Maps `f` over `items` on up to `threads` scoped threads, preserving order.
pub fn parallel_map<T: Sync, R: Send, E: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> Result<R, E> + Sync,
) -> Result<Vec<R>, E> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let results: Vec<Result<Vec<R>, E>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter().map(f).collect::<Result<Vec<R>, E>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub map50: ApReport,
    pub map75: ApReport,
}

pub fn evaluate_map(
    model: &OrientedDetr,
    scenes: &[Scene],
    classes: &[String],
    codec: &AxisCodecConfig,
    threshold: f64,
    threads: usize,
) -> Result<EvalSummary, TrainError> {
    let dets = detection_records(model, scenes, classes, codec, threshold, threads)?;
    let gts = ground_truth_records(scenes)?;
    Ok(EvalSummary {
        map50: average_precision(&dets, &gts, 0.5, ApProtocol::Voc12),
        map75: average_precision(&dets, &gts, 0.75, ApProtocol::Voc12),
    })
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: OrientedDetr,
    pub metrics: Vec<MetricsRecord>,
}

/// Trains from scratch with one optimizer step per image.
///
/// Epoch 0 of the metrics stream is a pass over the training set with the
/// initial parameters and no updates.
pub fn train(
    cfg: &RunConfig,
    samples: &[TrainSample],
    mut on_epoch: impl FnMut(&MetricsRecord, &OrientedDetr),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut model = OrientedDetr::new(cfg.model_config(), cfg.seed)?;
    let loss_cfg = TrainLossConfig::from_run(cfg)?;
    let codec = cfg.codec();
    let scenes: Vec<Scene> = samples.iter().map(|s| s.scene.clone()).collect();
    let mut opt = AdamW::new(&model.store, cfg.beta1, cfg.beta2, cfg.weight_decay);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(u64::MAX);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    aug_rng.set_stream(u64::MAX - 1);
    let mut metrics = Vec::with_capacity(cfg.epochs + 1);
    let count = samples.len().max(1) as f64;

    let mut initial = LossBreakdown::default();
    for s in samples {
        initial.add(&evaluate_loss(&model, s, &loss_cfg)?);
    }
    let rec = epoch_record(0, initial.scaled(1.0 / count), learning_rate(cfg, 0), None);
    on_epoch(&rec, &model);
    metrics.push(rec);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        let lr = learning_rate(cfg, epoch - 1);
        order.shuffle(&mut order_rng);
        let mut acc = LossBreakdown::default();
        for (step, &i) in order.iter().enumerate() {
            let augmented;
            let sample = if cfg.augment {
                let t = aug_rng.gen_range(0..8);
                augmented = prepare_sample(&dihedral_scene(&samples[i].scene, t)?, &cfg.classes, &codec)?;
                &augmented
            } else {
                &samples[i]
            };
            let (loss, mut grads) = loss_and_grads(&model, sample, &loss_cfg)?;
            let finite = loss.total.is_finite() && grads.iter().flatten().all(|g| g.is_finite());
            if !finite {
                return Err(TrainError::NonFiniteLoss { epoch, step, image: samples[i].id.clone() });
            }
            clip_grad_norm(&mut grads, cfg.grad_clip);
            opt.step(&mut model.store, &grads, lr);
            acc.add(&loss);
        }
        let eval = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let maps = if eval {
            let e = evaluate_map(&model, &scenes, &cfg.classes, &codec, cfg.score_threshold, 1)?;
            Some((e.map50.map, e.map75.map))
        } else {
            None
        };
        let rec = epoch_record(epoch, acc.scaled(1.0 / count), lr, maps);
        on_epoch(&rec, &model);
        metrics.push(rec);
    }
    Ok(TrainOutcome { model, metrics })
}

fn epoch_record(epoch: usize, l: LossBreakdown, lr: f64, maps: Option<(f64, f64)>) -> MetricsRecord {
    MetricsRecord {
        epoch,
        loss: l.total,
        loss_proj: l.proj,
        loss_axis: l.axis,
        loss_cls: l.cls,
        loss_select: l.select,
        lr,
        map50: maps.map(|m| m.0),
        map75: maps.map(|m| m.1),
    }
}
