//! Dense matrices, a reverse-mode tape over them, and named parameter sets.

mod check;
mod matrix;
mod params;
mod tape;

pub use check::{finite_diff_check, FiniteDiffReport, GRADIENT_FLOOR};
pub use matrix::{elementwise_norm, Matrix};
pub use params::{Bound, NamedMatrix, ParamId, Params};
pub use tape::{sigmoid, softplus, Gradients, NodeId, SquashData, Tape, Unary, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: NodeId, op: &'static str },
    #[error("expected a 1x1 value, got {shape:?}")]
    NotScalar { shape: (usize, usize) },
    #[error("{len} values cannot fill a {rows}x{cols} matrix")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("softmax row {row} has no unmasked entries")]
    EmptySoftmaxRow { row: usize },
    #[error("variable belongs to a different tape")]
    ForeignVar,
    #[error("parameter {name:?} is already defined")]
    DuplicateParam { name: String },
    #[error("unknown parameter {name:?}")]
    UnknownParam { name: String },
    #[error("parameter {name:?} contains non-finite entries")]
    NonFiniteParam { name: String },
    #[error("loss is non-finite at probe point (parameter {name:?}, entry {entry})")]
    NonFiniteProbe { name: String, entry: usize },
    #[error("finite-difference step must be positive, got {0}")]
    BadEpsilon(f64),
}
