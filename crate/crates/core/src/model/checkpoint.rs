//! Checkpoint container: a header line, one JSON metadata line with the model
//! config and tensor index, then the tensors as little-endian `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, OrientedDetr};
use crate::nn::Tensor;

pub const CHECKPOINT_HEADER: &str = "PAXKIT-CKPT-v1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    /// Seed used to construct the model; informational.
    seed: u64,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(mut out: W, model: &OrientedDetr, seed: u64) -> Result<(), ModelError> {
    let tensors = model
        .store
        .iter()
        .map(|(_, p)| TensorEntry { name: p.name.clone(), shape: p.value.shape().to_vec() })
        .collect();
    let meta = Meta { config: model.cfg.clone(), seed, tensors };
    let json = serde_json::to_string(&meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    writeln!(out, "{CHECKPOINT_HEADER}")?;
    writeln!(out, "{json}")?;
    for (_, p) in model.store.iter() {
        for v in p.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<OrientedDetr, ModelError> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    if line.trim_end() != CHECKPOINT_HEADER {
        return Err(ModelError::Checkpoint(format!("bad header {:?}", line.trim_end())));
    }
    line.clear();
    input.read_line(&mut line)?;
    let meta: Meta = serde_json::from_str(&line).map_err(|e| ModelError::Checkpoint(format!("metadata: {e}")))?;
    let mut model = OrientedDetr::new(meta.config, meta.seed)?;
    if meta.tensors.len() != model.store.len() {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint has {} tensors, config builds {}",
            meta.tensors.len(),
            model.store.len()
        )));
    }
    for entry in meta.tensors {
        let n: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        input.read_exact(&mut bytes).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", entry.name)))?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        model.store.load(&entry.name, Tensor::new(&entry.shape, data)?)?;
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(ModelError::Checkpoint("trailing bytes after tensor data".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &OrientedDetr, seed: u64) -> Result<(), ModelError> {
    write_checkpoint(BufWriter::new(File::create(path)?), model, seed)
}

pub fn load_checkpoint(path: &Path) -> Result<OrientedDetr, ModelError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
