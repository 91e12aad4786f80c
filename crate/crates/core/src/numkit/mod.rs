//! Minimal dense-array math with reverse-mode differentiation.
//!
//! Everything the model math needs and nothing more: flat row-major
//! tensors, a Wengert tape over a restricted primitive set, a
//! finite-difference gradient checker, and a binary checkpoint container.
//! Training runs at 32-bit; gradient verification runs at 64-bit.

mod check;
mod store;
mod tape;
mod tensor;

pub use check::grad_check;
pub use store::{load_checkpoint, save_checkpoint, ParameterStore};
pub use tape::{GradMap, Tape, TensorId};
pub use tensor::Tensor;

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar element type for all tensor math. Implemented for `f32`
/// (training) and `f64` (gradient verification).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Lift an `f64` constant into this precision.
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Errors from tensor construction and tape operations.
///
/// Non-finite values are an error state, not a propagated quantity:
/// every primitive checks its output and aborts the step on NaN/Inf.
#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    LossNotScalar(Vec<usize>),
    #[error("backward: tape already consumed")]
    TapeConsumed,
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    BadCheckpoint(String),
}
