use rand::Rng;

use super::{EditorSpec, EfficiencyModel, ModelError, ProportionModel};
use crate::nn::EncoderConfig;
use crate::seqcore::{
    enumerate_edit_sets, EditSet, EditWindow, ReferenceSequence, RepresentationMode,
    DEFAULT_ENUMERATION_CAP,
};

/// `score_i / sum(score)`.
pub fn normalize_scores(scores: &[f64]) -> Result<Vec<f64>, ModelError> {
    if scores.is_empty() {
        return Err(ModelError::EmptyOutcomeSet);
    }
    if scores.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(ModelError::DegenerateScores);
    }
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Err(ModelError::DegenerateScores);
    }
    Ok(scores.iter().map(|s| s / total).collect())
}

/// Normalise log scores through log-sum-exp.
pub fn normalize_log_scores(log_scores: &[f64]) -> Result<Vec<f64>, ModelError> {
    let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if log_scores.is_empty() {
        return Err(ModelError::EmptyOutcomeSet);
    }
    if !max.is_finite() {
        return Err(ModelError::DegenerateScores);
    }
    let shifted: Vec<f64> = log_scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = shifted.iter().sum();
    Ok(shifted.into_iter().map(|s| s / total).collect())
}

/// Full distribution with the wild type first: `[1 - p, p * c_1, p * c_2, ..]`.
pub fn compose_two_stage(p_edited: f64, conditional: &[f64]) -> Result<Vec<f64>, ModelError> {
    let sum: f64 = conditional.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || conditional.iter().any(|&c| c < 0.0) {
        return Err(ModelError::UnnormalizedConditional { sum });
    }
    if !(0.0..=1.0).contains(&p_edited) {
        return Err(ModelError::InvalidConfig(format!(
            "p_edited {p_edited} outside [0, 1]"
        )));
    }
    let mut out = Vec::with_capacity(conditional.len() + 1);
    out.push(1.0 - p_edited);
    out.extend(conditional.iter().map(|c| p_edited * c));
    Ok(out)
}

/// Unnormalised scores for outcomes of `reference` under the first editor's branch.
pub fn outcome_scores(
    model: &ProportionModel,
    reference: &ReferenceSequence,
    outcomes: &[EditSet],
) -> Result<Vec<f64>, ModelError> {
    Ok(model
        .infer_log_scores(0, reference, outcomes)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Distribution over the listed outcomes (wild type included) under a one-stage model.
pub fn one_stage_forward(
    model: &OneStageModel,
    reference: &ReferenceSequence,
    outcomes: &[EditSet],
) -> Result<Vec<f64>, ModelError> {
    if !outcomes.iter().any(|e| e.is_empty()) {
        return Err(ModelError::MissingWildType);
    }
    normalize_log_scores(&model.proportion.infer_log_scores(0, reference, outcomes)?)
}

/// `P(edited)` and the conditional over the listed non-wild outcomes for one editor.
pub fn multitask_forward(
    model: &MultiTaskModel,
    editor: &str,
    reference: &ReferenceSequence,
    outcomes: &[EditSet],
) -> Result<(f64, Vec<f64>), ModelError> {
    two_stage_pair(
        &model.efficiency,
        &model.proportion,
        editor,
        reference,
        outcomes,
    )
}

fn two_stage_pair(
    efficiency: &EfficiencyModel,
    proportion: &ProportionModel,
    editor: &str,
    reference: &ReferenceSequence,
    outcomes: &[EditSet],
) -> Result<(f64, Vec<f64>), ModelError> {
    let eb = efficiency.editor_index(editor)?;
    let pb = proportion.editor_index(editor)?;
    if outcomes.iter().any(|e| e.is_empty()) {
        return Err(ModelError::UnexpectedWildType);
    }
    let p = efficiency.predict(eb, &[reference])?[0];
    let cond = normalize_log_scores(&proportion.infer_log_scores(pb, reference, outcomes)?)?;
    Ok((p, cond))
}

/// Distribution over every enumerated outcome of a reference, wild type first.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedDistribution {
    pub outcomes: Vec<EditSet>,
    pub probabilities: Vec<f64>,
}

impl PredictedDistribution {
    pub fn wild_type(&self) -> f64 {
        self.probabilities[0]
    }

    pub fn get(&self, edits: EditSet) -> Option<f64> {
        self.outcomes
            .iter()
            .position(|&e| e == edits)
            .map(|i| self.probabilities[i])
    }
}

/// The three model families share one prediction surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    OneStage,
    TwoStage,
    MultiTask,
}

impl ModelVariant {
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::OneStage => "one-stage",
            ModelVariant::TwoStage => "two-stage",
            ModelVariant::MultiTask => "multi-task",
        }
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one-stage" => Ok(ModelVariant::OneStage),
            "two-stage" => Ok(ModelVariant::TwoStage),
            "multi-task" => Ok(ModelVariant::MultiTask),
            other => Err(format!(
                "unknown variant {other:?} (one-stage, two-stage, multi-task)"
            )),
        }
    }
}

pub trait OutcomePredictor {
    fn variant(&self) -> ModelVariant;
    fn editors(&self) -> &[EditorSpec];
    fn mode(&self) -> RepresentationMode;
    fn window(&self) -> EditWindow;

    fn enumeration_cap(&self) -> usize {
        DEFAULT_ENUMERATION_CAP
    }

    /// Full distribution over the enumerated outcome set for `editor`.
    fn predict_distribution(
        &self,
        editor: &str,
        reference: &ReferenceSequence,
    ) -> Result<PredictedDistribution, ModelError>;
}

fn two_stage_distribution(
    efficiency: &EfficiencyModel,
    proportion: &ProportionModel,
    editor: &str,
    reference: &ReferenceSequence,
    cap: usize,
) -> Result<PredictedDistribution, ModelError> {
    let pb = proportion.editor_index(editor)?;
    let eb = efficiency.editor_index(editor)?;
    let mask = proportion.mask(pb, reference);
    let edited = enumerate_edit_sets(&mask, false, cap)?;
    let mut outcomes = vec![EditSet::EMPTY];
    if edited.is_empty() {
        // nothing editable: the wild type is certain
        efficiency.check_mode(reference)?;
        return Ok(PredictedDistribution {
            outcomes,
            probabilities: vec![1.0],
        });
    }
    let p = efficiency.predict(eb, &[reference])?[0];
    let cond = normalize_log_scores(&proportion.infer_log_scores(pb, reference, &edited)?)?;
    let probabilities = compose_two_stage(p, &cond)?;
    outcomes.extend(edited);
    Ok(PredictedDistribution {
        outcomes,
        probabilities,
    })
}

/// Efficiency model times proportion model.
#[derive(Clone, Debug)]
pub struct TwoStageModel {
    pub efficiency: EfficiencyModel,
    pub proportion: ProportionModel,
}

impl TwoStageModel {
    pub fn new(
        mode: RepresentationMode,
        window: EditWindow,
        encoder: EncoderConfig,
        position_bias: bool,
        editor: EditorSpec,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        let efficiency = EfficiencyModel::single(mode, editor.clone(), rng);
        let proportion =
            ProportionModel::new(mode, window, encoder, position_bias, vec![editor], rng)?;
        Ok(TwoStageModel {
            efficiency,
            proportion,
        })
    }

    pub fn editor(&self) -> &EditorSpec {
        &self.proportion.editors[0]
    }

    /// `P(edited)` and the conditional over the listed non-wild outcomes.
    pub fn forward(
        &self,
        reference: &ReferenceSequence,
        outcomes: &[EditSet],
    ) -> Result<(f64, Vec<f64>), ModelError> {
        two_stage_pair(
            &self.efficiency,
            &self.proportion,
            &self.editor().id,
            reference,
            outcomes,
        )
    }
}

impl OutcomePredictor for TwoStageModel {
    fn variant(&self) -> ModelVariant {
        ModelVariant::TwoStage
    }
    fn editors(&self) -> &[EditorSpec] {
        &self.proportion.editors
    }
    fn mode(&self) -> RepresentationMode {
        self.proportion.mode
    }
    fn window(&self) -> EditWindow {
        self.proportion.window
    }
    fn predict_distribution(
        &self,
        editor: &str,
        reference: &ReferenceSequence,
    ) -> Result<PredictedDistribution, ModelError> {
        two_stage_distribution(
            &self.efficiency,
            &self.proportion,
            editor,
            reference,
            self.enumeration_cap(),
        )
    }
}

/// Proportion architecture scoring the wild type alongside edited outcomes.
#[derive(Clone, Debug)]
pub struct OneStageModel {
    pub proportion: ProportionModel,
}

impl OneStageModel {
    pub fn new(
        mode: RepresentationMode,
        window: EditWindow,
        encoder: EncoderConfig,
        position_bias: bool,
        editor: EditorSpec,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        Ok(OneStageModel {
            proportion: ProportionModel::new(
                mode,
                window,
                encoder,
                position_bias,
                vec![editor],
                rng,
            )?,
        })
    }
}

impl OutcomePredictor for OneStageModel {
    fn variant(&self) -> ModelVariant {
        ModelVariant::OneStage
    }
    fn editors(&self) -> &[EditorSpec] {
        &self.proportion.editors
    }
    fn mode(&self) -> RepresentationMode {
        self.proportion.mode
    }
    fn window(&self) -> EditWindow {
        self.proportion.window
    }
    fn predict_distribution(
        &self,
        editor: &str,
        reference: &ReferenceSequence,
    ) -> Result<PredictedDistribution, ModelError> {
        let branch = self.proportion.editor_index(editor)?;
        let mask = self.proportion.mask(branch, reference);
        let outcomes = enumerate_edit_sets(&mask, true, self.enumeration_cap())?;
        let probabilities = normalize_log_scores(
            &self
                .proportion
                .infer_log_scores(branch, reference, &outcomes)?,
        )?;
        Ok(PredictedDistribution {
            outcomes,
            probabilities,
        })
    }
}

/// Shared conv layers and reference encoder with one branch per editor.
#[derive(Clone, Debug)]
pub struct MultiTaskModel {
    pub efficiency: EfficiencyModel,
    pub proportion: ProportionModel,
}

impl MultiTaskModel {
    pub fn new(
        mode: RepresentationMode,
        window: EditWindow,
        encoder: EncoderConfig,
        position_bias: bool,
        editors: Vec<EditorSpec>,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        if editors.len() < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "multi-task needs at least two editors, got {}",
                editors.len()
            )));
        }
        let efficiency = EfficiencyModel::multi(mode, editors.clone(), rng);
        let proportion = ProportionModel::new(mode, window, encoder, position_bias, editors, rng)?;
        Ok(MultiTaskModel {
            efficiency,
            proportion,
        })
    }
}

impl OutcomePredictor for MultiTaskModel {
    fn variant(&self) -> ModelVariant {
        ModelVariant::MultiTask
    }
    fn editors(&self) -> &[EditorSpec] {
        &self.proportion.editors
    }
    fn mode(&self) -> RepresentationMode {
        self.proportion.mode
    }
    fn window(&self) -> EditWindow {
        self.proportion.window
    }
    fn predict_distribution(
        &self,
        editor: &str,
        reference: &ReferenceSequence,
    ) -> Result<PredictedDistribution, ModelError> {
        two_stage_distribution(
            &self.efficiency,
            &self.proportion,
            editor,
            reference,
            self.enumeration_cap(),
        )
    }
}
