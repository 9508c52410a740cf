//! Efficiency, proportion, one-stage, two-stage and multi-task models, plus the
//! normalisation and composition rules that turn scores into distributions.

mod efficiency;
mod proportion;
mod variants;

use thiserror::Error;

use crate::numcore::NumError;
use crate::seqcore::{EditorClass, RepresentationMode, SeqError};

pub use efficiency::{
    EfficiencyBranch, EfficiencyModel, MULTITASK_BRANCH_FILTERS, MULTITASK_SHARED_FILTERS,
};
pub use proportion::{
    outcome_bases, per_position_edit_probs, ProportionBranch, ProportionModel, ScoreGroup,
    INFERENCE_CHUNK,
};
pub use variants::{
    compose_two_stage, multitask_forward, normalize_log_scores, normalize_scores,
    one_stage_forward, outcome_scores, ModelVariant, MultiTaskModel, OneStageModel,
    OutcomePredictor, PredictedDistribution, TwoStageModel,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error("model expects {expected} input, got {found}")]
    ModeMismatch {
        expected: RepresentationMode,
        found: RepresentationMode,
    },
    #[error("outcome edits protospacer position {position}, which is not editable here")]
    IllegalOutcome { position: usize },
    #[error("empty outcome set")]
    EmptyOutcomeSet,
    #[error("all scores are zero")]
    DegenerateScores,
    #[error("conditional distribution sums to {sum}, not 1")]
    UnnormalizedConditional { sum: f64 },
    #[error("the wild type is not scored by the proportion model")]
    UnexpectedWildType,
    #[error("outcome list lacks the wild type")]
    MissingWildType,
    #[error("unknown editor {0:?}")]
    UnknownEditor(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
}

/// A registered editor: library id plus the chemistry that fixes its mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EditorSpec {
    pub id: String,
    pub class: EditorClass,
}

impl EditorSpec {
    pub fn new(id: impl Into<String>, class: EditorClass) -> Self {
        EditorSpec {
            id: id.into(),
            class,
        }
    }
}

pub(crate) fn editor_index(editors: &[EditorSpec], id: &str) -> Result<usize, ModelError> {
    editors
        .iter()
        .position(|e| e.id == id)
        .ok_or_else(|| ModelError::UnknownEditor(id.to_string()))
}

#[cfg(test)]
mod tests;
