//! Disentangling hypergraph neural networks on a small reverse-mode engine.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod hypergraph;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod segment;
pub mod sweep;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
