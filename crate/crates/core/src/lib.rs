//! Pedestrian crossing-intention prediction from pose sequences: a small reverse-mode
//! autodiff engine, the network layers built on it, feature encoding, data handling,
//! training and evaluation.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod gradsuite;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
