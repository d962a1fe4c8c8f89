//! Minimal dense tensor engine with reverse-mode differentiation and the
//! attention blocks used by the detector.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod layers;
mod params;
mod tensor;

use thiserror::Error;

pub use graph::{sinusoidal_pe, Gradients, Graph, Var};
pub use kernels::bilinear_sample;
pub use layers::{AttentionConfig, DeformableAttention, FeedForward, LayerNorm, Linear, Mlp, MultiHeadAttention};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("positional encoding width must be even (and a multiple of 4 for 2D), got {0}")]
    OddDimension(usize),
    #[error("reference point ({x}, {y}) outside [0, 1]^2")]
    RefPointOutOfRange { x: f64, y: f64 },
    #[error("{rows} rows cannot be split into groups of {group}")]
    GroupSizeMismatch { rows: usize, group: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}
