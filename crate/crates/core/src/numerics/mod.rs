//! Dense kernels, activations, losses with analytic gradients, AdamW and a
//! finite-difference gradient checker.
//!
//! Everything here is a pure function of its inputs. Optimizer state is
//! passed in and out explicitly.

mod gradcheck;
mod loss;
mod ops;
mod optim;
mod tensor;

pub use gradcheck::{check_gradients, relative_error};
pub use loss::{
    cross_entropy, cross_entropy_with_grad, triplet_loss, triplet_loss_with_grad, LossBreakdown,
    TripletMining, TripletValue, CE_PROB_FLOOR,
};
pub use ops::{
    cosine_grad, cosine_sim, dot, l2_norm, psi, psi_grad, sigmoid, silu, silu_grad, softmax,
    ZERO_NORM_EPS,
};
pub use optim::{adamw_step, AdamWConfig, AdamWState};
pub use tensor::Tensor2;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("ZeroVector: vector norm below {ZERO_NORM_EPS:e}")]
    ZeroVector,
    #[error("IndexOutOfRange: index {index} for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("ShapeMismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("NonFinite: {0}")]
    NonFinite(String),
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
}

impl NumericsError {
    pub fn kind(&self) -> &'static str {
        match self {
            NumericsError::ZeroVector => "ZeroVector",
            NumericsError::IndexOutOfRange { .. } => "IndexOutOfRange",
            NumericsError::ShapeMismatch { .. } => "ShapeMismatch",
            NumericsError::NonFinite(_) => "NonFinite",
            NumericsError::InvalidArgument(_) => "InvalidArgument",
        }
    }

    pub(crate) fn shape(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        NumericsError::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, NumericsError>;
