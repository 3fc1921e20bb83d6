//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] owns every value produced during a forward pass. Parameters and
//! inputs enter as leaves; each operation appends one record, and
//! [`Tape::backward`] walks the records once in reverse.

pub mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use tape::{OpKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid tensor shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    kernels::sigmoid(z)
}

/// Row-wise softmax of a `[rows, cols]` value array.
pub fn softmax_rows(values: &[f64], cols: usize) -> Vec<f64> {
    kernels::softmax_rows(values, cols)
}
