//! Query-level spatial-temporal reasoning for multi-frame 3D detection.
//!
//! The crate covers oriented box geometry, a small reverse-mode tensor
//! engine, a ConvGRU cell, graph node selection by soft score suppression,
//! spatial and temporal graph attention over query nodes, recollection of
//! previous-frame predictions as extra queries, Hungarian matching with an
//! IoU-regularized detection loss, and a synthetic multi-frame scene
//! simulator that drives all of it as a streaming pipeline.

pub mod ablation;
pub mod bench;
pub mod config;
pub mod convgru;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod head;
pub mod loss;
pub mod matching;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod selection;
pub mod sim;
pub mod stga;
pub mod tape;
pub mod tensor;
pub mod tqr;
pub mod train;

pub use error::{Error, Result};
pub use geometry::BevBox3D;
pub use tensor::Tensor;
