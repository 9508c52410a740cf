//! Losses, reference-level splits, balanced batching and the training loops.

mod config;
mod losses;
mod sampler;
mod split;
mod stage;
mod trainers;

use thiserror::Error;

use crate::data::DataError;
use crate::models::ModelError;
use crate::numcore::NumError;

pub use config::{LogRow, TrainConfig, TrainingLog, LOG_COLUMNS};
pub use losses::{
    efficiency_loss, efficiency_loss_graph, kl_divergence, proportion_loss, proportion_loss_graph,
    PROBABILITY_FLOOR,
};
pub use sampler::BalancedSampler;
pub use split::{split_dataset, DatasetSplit, SplitSpec, MIN_SPLIT_REFERENCES};
pub use stage::StageSummary;
pub use trainers::{
    full_distribution_targets, train_efficiency, train_multitask, train_one_stage,
    train_proportion, train_two_stage, EditorSplit, TrainReport,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("support mismatch: target has {target} entries, prediction {pred}")]
    SupportMismatch { target: usize, pred: usize },
    #[error("{found} references is too few to split (need {needed})")]
    TooFewReferences { found: usize, needed: usize },
    #[error("batch size {batch} is not divisible by the {editors} editors")]
    IndivisibleBatch { batch: usize, editors: usize },
    #[error("unknown editor {0:?}")]
    UnknownEditor(String),
    #[error("{stage} loss diverged in epoch {epoch}")]
    DivergedLoss { stage: String, epoch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
