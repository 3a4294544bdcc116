//! Dense tensors, a reverse-mode tape, named parameter storage and Adam.

mod adam;
pub mod finite_diff;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{ParamId, ParamStore};
pub use tape::{ElementwiseKind, Gradients, ReduceKind, Tape, Var, LOG_CLAMP};
pub use tensor::{log_softmax, sigmoid, softmax, Tensor};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    /// Forward values are rounded through `f32` after every op.
    F32,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected a matrix, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("shape {shape:?} does not match {len} data elements")]
    BadData { shape: Vec<usize>, len: usize },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("{op}: index {index} out of range for extent {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("unknown op kind `{0}`")]
    UnknownKind(String),
    #[error("{op}: wrong operand count (binary op: {binary})")]
    Arity { op: &'static str, binary: bool },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}
