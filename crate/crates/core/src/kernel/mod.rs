//! A small reverse-mode differentiation kernel specialised to the fixed
//! computation graph of the model: dense products, bias and elementwise
//! arithmetic, `tanh`/`exp`/`log`, row gathers and scatters over edge index
//! arrays, per-destination softmax, row normalisation, reductions, and a
//! chunked negative-sample similarity sum.
//!
//! Operations are recorded on a [`Tape`] in execution order and return
//! [`Var`] handles; [`Tape::backward`] walks the record in reverse and
//! accumulates gradients into every node that depends on a leaf.
//!
//! All values and gradients are `f64`.

mod tape;
mod tensor;

pub use tape::{Index, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("index {index} out of range for {bound} rows in {op}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward already ran on this tape; reset it first")]
    BackwardTwice,

    #[error("backward needs a 1x1 output, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
}

pub type KernelResult<T> = std::result::Result<T, KernelError>;
