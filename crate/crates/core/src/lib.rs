//! Benchmark harness for cross-modal generalization of a small MLP learner trained on
//! frozen-encoder embeddings.

pub mod algorithms;
pub mod checks;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod selection;
pub mod sweep;

pub use error::{Error, Result};
