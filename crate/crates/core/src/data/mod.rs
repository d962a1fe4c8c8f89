//! Annotation I/O, synthetic scenes, run configuration and metrics output.

pub mod config;
pub mod dota;
mod image;
pub mod metrics;
pub mod synth;

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::RunConfig;
pub use dota::{parse_dota, write_dota, Annotation, DotaFile};
pub use image::Image;
pub use metrics::{MetricsRecord, MetricsWriter};
pub use synth::{generate_scene, generate_synthetic, split_seed, Split, SynthParams, SyntheticScene};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}, column {column}: {reason}")]
    Parse { line: usize, column: usize, reason: String },
    #[error("line {line}: expected 10 tokens, got {got}")]
    TooFewTokens { line: usize, got: usize },
    #[error("line {line}, column {column}: non-numeric coordinate {token:?}")]
    NonNumericCoordinate { line: usize, column: usize, token: String },
    #[error("could not place object {object} of scene {image} after {attempts} attempts")]
    PlacementFailure { image: usize, object: usize, attempts: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key:?}: expected {expected}, found {found}")]
    TypeError { key: String, expected: &'static str, found: String },
    #[error("config syntax: {0}")]
    ConfigSyntax(String),
    #[error("image: {0}")]
    ImageFormat(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Run seed before split derivation.
    pub seed: u64,
    #[serde(default)]
    pub split: Split,
    pub params: SynthParams,
    pub scenes: Vec<String>,
}

/// One image with its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub image: Image,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub scenes: Vec<Scene>,
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Writes `scene_NNNN.ppm`, `scene_NNNN.txt` and the manifest. `seed` is the
/// run seed; the scenes should come from `split_seed(seed, split)`.
pub fn write_scenes(
    dir: &Path,
    seed: u64,
    split: Split,
    params: &SynthParams,
    scenes: &[SyntheticScene],
) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let mut ids = Vec::with_capacity(scenes.len());
    for s in scenes {
        let id = scene_id(s.index);
        s.image.write_ppm(BufWriter::new(fs::File::create(dir.join(format!("{id}.ppm")))?))?;
        let file = DotaFile {
            imagesource: Some("paxkit-synth".into()),
            gsd: Some("1".into()),
            annotations: s.annotations.clone(),
        };
        fs::write(dir.join(format!("{id}.txt")), write_dota(&file))?;
        ids.push(id);
    }
    let manifest = Manifest { seed, split, params: params.clone(), scenes: ids };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| DataError::Dataset(e.to_string()))?;
    fs::write(dir.join(MANIFEST), json + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DataError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| DataError::Dataset(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| DataError::Dataset(format!("{}: {e}", path.display())))
}

fn scene_path(dir: &Path, id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{id}.{ext}"))
}

/// Generates the scenes of one split and writes them to `dir`.
pub fn synthesize(dir: &Path, seed: u64, split: Split, params: &SynthParams) -> Result<Manifest, DataError> {
    let scenes = generate_synthetic(split_seed(seed, split), params)?;
    write_scenes(dir, seed, split, params, &scenes)?;
    read_manifest(dir)
}

/// Loads a scene directory written by [`write_scenes`].
pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let manifest = read_manifest(dir)?;
    let mut scenes = Vec::with_capacity(manifest.scenes.len());
    for id in &manifest.scenes {
        let img_path = scene_path(dir, id, "ppm");
        let image = Image::read_ppm(BufReader::new(
            fs::File::open(&img_path).map_err(|e| DataError::Dataset(format!("{}: {e}", img_path.display())))?,
        ))?;
        let text = fs::read_to_string(scene_path(dir, id, "txt"))?;
        let annotations = parse_dota(&text)?.annotations;
        scenes.push(Scene { id: id.clone(), image, annotations });
    }
    Ok(Dataset { classes: manifest.params.classes, scenes })
}
