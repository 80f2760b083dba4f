//! Semantically enhanced feature learning on a small CNN: contiguous channel
//! groups regularized toward within-group correlation and cross-group
//! decorrelation, trained jointly with a max-entropy + distillation objective,
//! plus the analysis tooling (correlation maps, activation maps, rank scores)
//! used to inspect the result.

pub mod analysis;
pub mod data;
pub mod error;
pub mod loss;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
