//! Dense tensors, a reverse-mode tape and the small linear algebra the
//! classifier heads need.

mod gradcheck;
pub mod linalg;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, check_gradients_with};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("expected a square matrix, got {0:?}")]
    NotSquare(Vec<usize>),
    #[error("matrix is singular")]
    SingularMatrix,
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("row {0} has zero L1 norm")]
    ZeroRow(usize),
    #[error("{0}")]
    InvalidArgument(String),
}
