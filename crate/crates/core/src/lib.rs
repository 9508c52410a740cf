//! Prediction of base-editing outcome distributions.
//!
//! The crate is organised bottom-up:
//! - [`seqcore`]: sequences, edit masks, outcome enumeration
//! - [`numcore`]: tensors and reverse-mode differentiation
//! - [`nn`]: embedding, attention encoder, convolutional trunk, heads
//! - [`models`]: efficiency, proportion, one-stage, two-stage and multi-task models
//! - [`training`]: losses, splits, samplers and training loops
//! - [`data`]: library files, targets, synthetic screens, checkpoints
//! - [`eval`]: correlation metrics and evaluation views

pub mod data;
pub mod eval;
pub mod models;
pub mod nn;
pub mod numcore;
pub mod seqcore;
pub mod training;

pub use numcore::{Graph, NumError, ParamStore, Tensor, Var};
pub use seqcore::{
    EditSet, EditWindow, EditorClass, Nucleotide, OutcomeSequence, ReferenceSequence,
    RepresentationMode, SeqError,
};
