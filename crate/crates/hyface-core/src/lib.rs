//! Core math and data layer for the hyface pipeline: blendshape head model,
//! differentiable rasterizer, loss definitions, evaluation metrics, and
//! dataset/serialization formats. Everything here is pure Rust over ndarray;
//! the neural-network layer lives in the companion `hyface-nn` crate.

pub mod archive;
pub mod coords;
pub mod data;
pub mod error;
pub mod head;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod render;

pub use error::{Error, Result};
