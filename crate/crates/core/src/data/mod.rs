//! Library files, target derivation, the synthetic screen generator and checkpoints.

mod checkpoint;
mod library;
mod synth;
mod targets;

use thiserror::Error;

use crate::models::ModelError;
use crate::seqcore::SeqError;

pub use checkpoint::{
    load_checkpoint, load_multitask, load_one_stage, load_two_stage, save_checkpoint, Checkpoint,
    RngState, Topology, TrainedModel, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use library::{
    edits_from_full_outcome, full_outcome_text, library_to_string, load_library, read_library,
    write_library, LibraryDataset, LibrarySchema, LibraryStats, OutcomeRecord, ReferenceRecord,
    LIBRARY_COLUMNS, NORMALIZATION_TOLERANCE,
};
pub use synth::{
    default_profiles, generate_synthetic_screen, random_references, read_truth, truth_to_string,
    write_truth, OracleEditorProfile, SyntheticScreen, TruthRow, MIN_READS_PER_REFERENCE,
    TRUTH_COLUMNS, TRUTH_FLOOR,
};
pub use targets::{
    derive_efficiency_targets, derive_proportion_targets, EfficiencyTarget, ProportionTarget,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("read error: {0}")]
    Read(#[from] std::io::Error),
    #[error("row {row}: {message}")]
    Schema { row: usize, message: String },
    #[error("row {row}: illegal outcome: {message}")]
    IllegalOutcomeRow { row: usize, message: String },
    #[error("{editor}/{reference}: proportions sum to {sum}")]
    Normalization {
        editor: String,
        reference: String,
        sum: f64,
    },
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    TopologyMismatch { expected: String, found: String },
}
