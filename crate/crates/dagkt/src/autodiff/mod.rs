//! Minimal reverse-mode differentiation engine.
//!
//! Just enough machinery for the model in this crate: dense `f64` tensors,
//! a per-batch [`Tape`], a persistent [`ParamStore`], and an [`Adam`]
//! optimizer with global-norm clipping. Not a general-purpose framework.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod store;
mod tape;
mod tensor;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use gradcheck::{finite_difference_report, relative_error, GradCheckReport};
pub use store::{ParamId, ParamStore, Parameter};
pub use tape::{sigmoid, Tape, Var, BCE_EPS};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("bad tensor construction: {0}")]
    BadShape(String),
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward target must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("keep probability must be in (0, 1], got {0}")]
    InvalidKeepProb(f64),
    #[error("unknown parameter name: {0}")]
    UnknownParam(String),
    #[error("duplicate parameter name: {0}")]
    DuplicateParam(String),
}
