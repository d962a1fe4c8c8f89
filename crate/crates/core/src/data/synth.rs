//! Synthetic oriented-rectangle scenes.
//!
//! Each scene draws its own RNG stream from the run seed, so scene `i` does
//! not depend on how many scenes are generated.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Annotation, DataError, Image};
use crate::geometry::{obb_to_quad, rotated_iou, OrientedBox, Point};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Pairwise rotated IoU between objects in one scene stays below this.
pub const MAX_PAIR_IOU: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    pub max_objects: usize,
    /// Long side length in pixels.
    pub size_range: (f64, f64),
    /// Long side over short side, at least 1.
    pub aspect_range: (f64, f64),
    pub classes: Vec<String>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_images: 8,
            height: 64,
            width: 64,
            max_objects: 4,
            size_range: (20.0, 34.0),
            aspect_range: (1.3, 2.5),
            classes: default_classes(),
        }
    }
}

pub fn default_classes() -> Vec<String> {
    ["plane", "ship", "vehicle"].map(String::from).to_vec()
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidParams(m));
        let (s0, s1) = self.size_range;
        let (a0, a1) = self.aspect_range;
        if self.height == 0 || self.width == 0 {
            return bad("image size must be positive".into());
        }
        if self.max_objects == 0 {
            return bad("max_objects must be at least 1".into());
        }
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return bad(format!("size range ({s0}, {s1}) must be positive and ordered"));
        }
        if !(a0 >= 1.0 && a0 <= a1 && a1.is_finite()) {
            return bad(format!("aspect range ({a0}, {a1}) must be ordered and at least 1"));
        }
        if self.classes.is_empty() || self.classes.iter().any(|c| c.is_empty() || c.contains(char::is_whitespace)) {
            return bad("classes must be non-empty tokens without whitespace".into());
        }
        Ok(())
    }
}

/// Which half of a train/validation pair a scene set belongs to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(format!("unknown split {other:?}, expected train or val")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// Stream reserved for deriving validation seeds; scene streams use the
/// scene index, so this cannot collide with a realistic scene count.
const VAL_STREAM: u64 = u64::MAX - 1;

/// Generator seed for a split. Train uses the run seed itself; validation
/// draws a seed from a reserved stream, so the two sets never share scenes.
pub fn split_seed(seed: u64, split: Split) -> u64 {
    match split {
        Split::Train => seed,
        Split::Val => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(VAL_STREAM);
            rng.next_u64()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub rect: OrientedBox,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub index: usize,
    pub seed: u64,
    pub image: Image,
    pub objects: Vec<SceneObject>,
    pub annotations: Vec<Annotation>,
}

pub fn generate_synthetic(seed: u64, params: &SynthParams) -> Result<Vec<SyntheticScene>, DataError> {
    params.validate()?;
    (0..params.n_images).map(|i| generate_scene(seed, i, params)).collect()
}

pub fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn generate_scene(seed: u64, index: usize, params: &SynthParams) -> Result<SyntheticScene, DataError> {
    params.validate()?;
    let mut rng = scene_rng(seed, index);
    let count = rng.gen_range(1..=params.max_objects);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    for obj in 0..count {
        let rect = place(&mut rng, params, &objects).ok_or(DataError::PlacementFailure {
            image: index,
            object: obj,
            attempts: MAX_PLACEMENT_ATTEMPTS,
        })?;
        let class = rng.gen_range(0..params.classes.len());
        objects.push(SceneObject { rect, class });
    }
    let image = render(&mut rng, params, &objects);
    let annotations = objects
        .iter()
        .map(|o| Annotation { quad: obb_to_quad(&o.rect), category: params.classes[o.class].clone(), difficult: false })
        .collect();
    Ok(SyntheticScene { index, seed, image, objects, annotations })
}

fn place(rng: &mut ChaCha8Rng, p: &SynthParams, existing: &[SceneObject]) -> Option<OrientedBox> {
    let (w_img, h_img) = (p.width as f64, p.height as f64);
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let theta = rng.gen_range(0.0..PI);
        let long = sample(rng, p.size_range);
        let aspect = sample(rng, p.aspect_range);
        let (w, h) = (long, long / aspect);
        let (c, s) = (theta.cos().abs(), theta.sin().abs());
        let ex = 0.5 * (w * c + h * s);
        let ey = 0.5 * (w * s + h * c);
        if 2.0 * ex > w_img || 2.0 * ey > h_img {
            continue;
        }
        let cx = sample(rng, (ex, w_img - ex));
        let cy = sample(rng, (ey, h_img - ey));
        let Ok(rect) = OrientedBox::new(cx, cy, w, h, theta) else { continue };
        let inside = rect.corners().iter().all(|q| q.x >= 0.0 && q.y >= 0.0 && q.x <= w_img && q.y <= h_img);
        if inside && existing.iter().all(|o| rotated_iou(&o.rect, &rect) < MAX_PAIR_IOU) {
            return Some(rect);
        }
    }
    None
}

fn sample(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

const PALETTE: [[f64; 3]; 6] = [
    [0.90, 0.25, 0.20],
    [0.20, 0.75, 0.30],
    [0.25, 0.40, 0.95],
    [0.95, 0.85, 0.20],
    [0.80, 0.30, 0.85],
    [0.20, 0.85, 0.85],
];

/// Supersampling grid per pixel axis.
const SUPERSAMPLE: usize = 4;
/// Width in pixels of the darkened band along object edges.
const EDGE_BAND: f64 = 1.5;

/// Background noise, a flat class colour inside each rectangle, and edge
/// darkening that is stronger along the long sides than the short ones.
fn render(rng: &mut ChaCha8Rng, p: &SynthParams, objects: &[SceneObject]) -> Image {
    let mut img = Image::new(p.height, p.width, 3);
    for v in img.data.iter_mut() {
        *v = 0.35 + rng.gen_range(-0.08..0.08);
    }
    let step = 1.0 / SUPERSAMPLE as f64;
    for obj in objects {
        let r = &obj.rect;
        let u = r.axis_u();
        let v = u.perp();
        let (hw, hh) = (r.w / 2.0, r.h / 2.0);
        let fill = PALETTE[obj.class % PALETTE.len()];
        let (x0, x1, y0, y1) = pixel_bounds(r, p);
        for y in y0..y1 {
            for x in x0..x1 {
                let mut cover = 0.0;
                let mut shade = 0.0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let q = Point::new(x as f64 + (sx as f64 + 0.5) * step, y as f64 + (sy as f64 + 0.5) * step);
                        let d = q - Point::new(r.cx, r.cy);
                        let (a, b) = (d.dot(u).abs(), d.dot(v).abs());
                        if a <= hw && b <= hh {
                            cover += 1.0;
                            let mut f: f64 = 1.0;
                            if hh - b < EDGE_BAND {
                                f -= 0.55;
                            }
                            if hw - a < EDGE_BAND {
                                f -= 0.25;
                            }
                            shade += f.max(0.1);
                        }
                    }
                }
                if cover > 0.0 {
                    let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
                    let alpha = cover / n;
                    let f = shade / cover;
                    let px = img.pixel_mut(y, x);
                    for (c, val) in px.iter_mut().enumerate() {
                        *val = (1.0 - alpha) * *val + alpha * fill[c] * f;
                    }
                }
            }
        }
    }
    img
}

fn pixel_bounds(r: &OrientedBox, p: &SynthParams) -> (usize, usize, usize, usize) {
    let cs = r.corners();
    let min_x = cs.iter().map(|c| c.x).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let max_x = (cs.iter().map(|c| c.x).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(p.width);
    let min_y = cs.iter().map(|c| c.y).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let max_y = (cs.iter().map(|c| c.y).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(p.height);
    (min_x, max_x, min_y, max_y)
}
