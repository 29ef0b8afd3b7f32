//! Dense tensors and a reverse-mode tape.
//!
//! Values live in [`Tensor`]. Differentiable computations are recorded on a
//! [`Tape`] through [`Var`] handles; [`Tape::backward`] replays the record in
//! reverse and accumulates gradients for every node that requires them.
//! Everything is single threaded and executes in recorded order, so identical
//! inputs give bitwise identical values and gradients.

mod real;
mod tape;
mod value;

pub use real::Real;
pub use tape::{Tape, Var};
pub use value::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("{op}: contract violation: {detail}")]
    Contract { op: &'static str, detail: String },
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Self::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Self::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Self::Domain {
            op,
            detail: detail.into(),
        }
    }
}
