//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are methods on [`Tape`]; each returns a [`Var`] whose value is
//! computed eagerly. When the tape is recording and at least one input is
//! tracked, the op is appended to the tape so [`Tape::backward`] can replay it
//! in reverse creation order.
//!
//! Broadcasting is limited to single-element operands in the elementwise
//! binary ops. Everything else needs an explicit reshape, gather or
//! [`Tape::add_row`].

mod tape;
mod tensor;

pub use tape::{BinaryOp, Gradients, NodeId, ReduceOp, Tape, UnaryOp, Var};
pub use tensor::{Shape, Tensor};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} expects a rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op} on an empty tensor")]
    Empty { op: &'static str },
    #[error("axis {axis} out of range for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
