//! Point-axis oriented object detection.
//!
//! Oriented boxes are represented as a point set plus a four-peak circular
//! axis label. The crate provides the geometry, the codec, the projection
//! losses, Hungarian matching, rotated-IoU evaluation, a small autograd
//! engine and a desk-scale oriented DETR built on it.

pub mod axis;
pub mod data;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod matching;
pub mod model;
pub mod nn;
pub mod train;
pub mod verify;
