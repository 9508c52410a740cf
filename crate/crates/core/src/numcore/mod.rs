//! Dense tensors, a reverse-mode differentiation tape, optimisers and gradient checks.

mod gradcheck;
mod graph;
mod linalg;
mod ops;
mod optim;
mod params;
mod rng;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, grad_check_params, DEFAULT_STEP};
pub use graph::{Gradients, Graph, Var};
pub use ops::LAYER_NORM_EPS;
pub use optim::{cyclic_lr, l2_penalty, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use rng::{derive_seed, derived, seeded, RngStream};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {ndim}")]
    BadAxis {
        op: &'static str,
        axis: usize,
        ndim: usize,
    },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid learning-rate schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
}
