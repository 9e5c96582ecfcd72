pub mod augment;
pub mod bridge;
pub mod checkpoint;
pub mod error;
pub mod geometry;
pub mod layers;
pub mod losses;
pub mod model;
pub mod optim;
pub mod store;
pub mod synthesizer;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
