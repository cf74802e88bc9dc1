//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation as it is evaluated, so node order is
//! already topological. [`Tape::backward`] walks the record in reverse from a
//! scalar root and accumulates gradients for every node that depends on a
//! differentiable leaf. Tapes share nothing, so independent tapes can be built
//! on different threads.

mod check;
mod linalg;
mod params;
mod tape;
mod tensor;

use alloc::string::String;
use core::fmt;

pub use check::{finite_diff_check, GradCheck};
pub use params::{Bound, ParamStore};
pub use tape::{sigmoid_value, softplus, Gradients, OpKind, Tape, Var, NORMALIZE_EPS};
pub use tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum DiffError {
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    NonScalarRoot { shape: (usize, usize) },
    InvalidArgument { op: &'static str, reason: &'static str },
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    UnknownParam(String),
    DuplicateParam(String),
    NonFinite { param: String, index: usize },
}

impl fmt::Display for DiffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {}x{} and {}x{}", left.0, left.1, right.0, right.1)
            }
            DiffError::NonScalarRoot { shape } => {
                write!(f, "backward root must be 1x1, got {}x{}", shape.0, shape.1)
            }
            DiffError::InvalidArgument { op, reason } => write!(f, "{op}: {reason}"),
            DiffError::IndexOutOfRange { op, index, len } => {
                write!(f, "{op}: index {index} out of range for length {len}")
            }
            DiffError::UnknownParam(name) => write!(f, "unknown parameter `{name}`"),
            DiffError::DuplicateParam(name) => write!(f, "duplicate parameter `{name}`"),
            DiffError::NonFinite { param, index } => {
                write!(f, "non-finite loss when perturbing `{param}`[{index}]")
            }
        }
    }
}

impl core::error::Error for DiffError {}
