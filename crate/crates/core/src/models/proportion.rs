use rand::Rng;

use super::{editor_index, EditorSpec, ModelError};
use crate::nn::{Encoder, EncoderConfig, OutputNet};
use crate::numcore::{Graph, ParamStore, Tensor, Var};
use crate::seqcore::{
    edit_mask, EditMask, EditSet, EditWindow, EditorClass, Nucleotide, ReferenceSequence,
    RepresentationMode,
};

/// Outcomes scored per graph during inference.
pub const INFERENCE_CHUNK: usize = 256;

/// One reference and the outcomes (as edit sets) to score against it.
#[derive(Clone, Copy, Debug)]
pub struct ScoreGroup<'a> {
    pub reference: &'a ReferenceSequence,
    pub edits: &'a [EditSet],
}

/// Editor-specific outcome encoder and output network.
#[derive(Clone, Debug)]
pub struct ProportionBranch {
    pub out_encoder: Encoder,
    pub output: OutputNet,
}

/// Reference encoder, outcome encoder and per-position output network.
/// An outcome's score is the product over editable positions of the
/// edited / not-edited probability matching what the outcome did there.
#[derive(Clone, Debug)]
pub struct ProportionModel {
    pub mode: RepresentationMode,
    pub window: EditWindow,
    pub encoder_config: EncoderConfig,
    pub position_bias: bool,
    pub editors: Vec<EditorSpec>,
    pub ref_encoder: Encoder,
    pub branches: Vec<ProportionBranch>,
    pub params: ParamStore,
}

/// Reference bases with `edits` (0-based protospacer positions) applied.
pub fn outcome_bases(
    reference: &ReferenceSequence,
    editor: EditorClass,
    edits: EditSet,
) -> Vec<Nucleotide> {
    let offset = reference.mode().protospacer_offset();
    let mut bases = reference.bases();
    for p in edits.positions() {
        bases[offset + p] = editor.target_base();
    }
    bases
}

impl ProportionModel {
    pub fn new(
        mode: RepresentationMode,
        window: EditWindow,
        encoder_config: EncoderConfig,
        position_bias: bool,
        editors: Vec<EditorSpec>,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        if editors.is_empty() {
            return Err(ModelError::InvalidConfig(
                "at least one editor is required".into(),
            ));
        }
        let mut params = ParamStore::new();
        let ref_encoder = Encoder::new(&mut params, "prop.ref", encoder_config, rng)?;
        let mut branches = Vec::with_capacity(editors.len());
        for e in &editors {
            let name = format!("prop.{}", e.id);
            let out_encoder =
                Encoder::new(&mut params, &format!("{name}.out"), encoder_config, rng)?;
            let output = OutputNet::new(
                &mut params,
                &format!("{name}.head"),
                2 * encoder_config.d_model,
                encoder_config.t_max,
                position_bias,
                rng,
            );
            branches.push(ProportionBranch {
                out_encoder,
                output,
            });
        }
        Ok(ProportionModel {
            mode,
            window,
            encoder_config,
            position_bias,
            editors,
            ref_encoder,
            branches,
            params,
        })
    }

    pub fn editor_index(&self, id: &str) -> Result<usize, ModelError> {
        editor_index(&self.editors, id)
    }

    pub fn mask(&self, branch: usize, reference: &ReferenceSequence) -> EditMask {
        edit_mask(reference, self.editors[branch].class, self.window)
    }

    fn check_group(&self, branch: usize, group: &ScoreGroup) -> Result<EditMask, ModelError> {
        if group.reference.mode() != self.mode {
            return Err(ModelError::ModeMismatch {
                expected: self.mode,
                found: group.reference.mode(),
            });
        }
        let mask = self.mask(branch, group.reference);
        let allowed = mask.as_edit_set().bits();
        for e in group.edits {
            let stray = e.bits() & !allowed;
            if stray != 0 {
                return Err(ModelError::IllegalOutcome {
                    position: stray.trailing_zeros() as usize + 1,
                });
            }
        }
        Ok(mask)
    }

    /// Reference encodings `[R, T, d]`.
    pub fn encode_references(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        refs: &[&ReferenceSequence],
        dropout: f64,
    ) -> Result<Var, ModelError> {
        let bases: Vec<_> = refs.iter().map(|r| r.bases()).collect();
        let views: Vec<&[_]> = bases.iter().map(Vec::as_slice).collect();
        let x = g.constant(crate::nn::batch_one_hot(&views)?);
        Ok(self.ref_encoder.forward(g, store, x, dropout)?)
    }

    /// Unnormalised log scores `[N]` for all outcomes of all groups, given
    /// reference encodings `z_ref` whose row `i` belongs to `groups[i]`.
    pub fn log_scores_from_encoded(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        branch: usize,
        z_ref: Var,
        groups: &[ScoreGroup],
        dropout: f64,
    ) -> Result<Var, ModelError> {
        let class = self.editors[branch].class;
        let t = self.mode.seq_len();
        let n: usize = groups.iter().map(|gr| gr.edits.len()).sum();
        if n == 0 {
            return Err(ModelError::EmptyOutcomeSet);
        }
        let mut one_hot = vec![0.0; n * t * 4];
        let mut selector = vec![0.0; n * t * 2];
        let mut ref_index = Vec::with_capacity(n);
        let mut row = 0;
        for (ri, group) in groups.iter().enumerate() {
            let mask = self.check_group(branch, group)?;
            let offset = mask.offset();
            for &edits in group.edits {
                for (j, b) in outcome_bases(group.reference, class, edits)
                    .iter()
                    .enumerate()
                {
                    one_hot[(row * t + j) * 4 + b.index()] = 1.0;
                }
                for (j, &flag) in mask.flags().iter().enumerate() {
                    if flag {
                        let col = if edits.contains(j - offset) { 0 } else { 1 };
                        selector[(row * t + j) * 2 + col] = 1.0;
                    }
                }
                ref_index.push(ri);
                row += 1;
            }
        }
        let b = &self.branches[branch];
        let x = g.constant(Tensor::from_vec(vec![n, t, 4], one_hot));
        let z_out = b.out_encoder.forward(g, store, x, dropout)?;
        let d = self.encoder_config.d_model;
        let r = g.shape(z_ref)[0];
        let zr = g.reshape(z_ref, vec![r, t * d])?;
        let zr = g.embedding_gather(zr, &ref_index)?;
        let zr = g.reshape(zr, vec![n, t, d])?;
        let z = g.concat(&[zr, z_out], 2)?;
        let lp = b.output.log_probs(g, store, z)?;
        let sel = g.constant(Tensor::from_vec(vec![n, t, 2], selector));
        let picked = g.mul(lp, sel)?;
        let per_pos = g.sum_axis(picked, 2)?;
        Ok(g.sum_axis(per_pos, 1)?)
    }

    /// Encode the references and score their outcomes in one graph.
    pub fn log_scores(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        branch: usize,
        groups: &[ScoreGroup],
        dropout: f64,
    ) -> Result<Var, ModelError> {
        let refs: Vec<_> = groups.iter().map(|gr| gr.reference).collect();
        let z_ref = self.encode_references(g, store, &refs, dropout)?;
        self.log_scores_from_encoded(g, store, branch, z_ref, groups, dropout)
    }

    /// Log-probabilities normalised within each group over the listed outcomes.
    pub fn log_normalized(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        branch: usize,
        groups: &[ScoreGroup],
        dropout: f64,
    ) -> Result<Var, ModelError> {
        let s = self.log_scores(g, store, branch, groups, dropout)?;
        let sizes: Vec<usize> = groups.iter().map(|gr| gr.edits.len()).collect();
        if sizes.contains(&0) {
            return Err(ModelError::EmptyOutcomeSet);
        }
        Ok(g.group_log_softmax(s, &sizes)?)
    }

    /// Inference-mode log scores for any number of outcomes of one reference,
    /// encoding the reference once and scoring outcomes in chunks.
    pub fn infer_log_scores(
        &self,
        branch: usize,
        reference: &ReferenceSequence,
        edits: &[EditSet],
    ) -> Result<Vec<f64>, ModelError> {
        if edits.is_empty() {
            return Err(ModelError::EmptyOutcomeSet);
        }
        self.check_group(branch, &ScoreGroup { reference, edits })?;
        let z_ref = {
            let mut g = Graph::inference();
            let z = self.encode_references(&mut g, &self.params, &[reference], 0.0)?;
            g.value(z).clone()
        };
        let mut out = Vec::with_capacity(edits.len());
        for chunk in edits.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::inference();
            let zr = g.constant(z_ref.clone());
            let group = ScoreGroup {
                reference,
                edits: chunk,
            };
            let s =
                self.log_scores_from_encoded(&mut g, &self.params, branch, zr, &[group], 0.0)?;
            out.extend_from_slice(g.value(s).data());
        }
        Ok(out)
    }

    /// Per-position `[p_edited, p_not_edited]` rows `[T, 2]` for one outcome.
    fn position_probs(
        &self,
        branch: usize,
        reference: &ReferenceSequence,
        edits: EditSet,
    ) -> Result<Tensor, ModelError> {
        let mut g = Graph::inference();
        let z_ref = self.encode_references(&mut g, &self.params, &[reference], 0.0)?;
        let b = &self.branches[branch];
        let bases = outcome_bases(reference, self.editors[branch].class, edits);
        let x = g.constant(crate::nn::batch_one_hot(&[&bases])?);
        let z_out = b.out_encoder.forward(&mut g, &self.params, x, 0.0)?;
        let z = g.concat(&[z_ref, z_out], 2)?;
        let lp = b.output.log_probs(&mut g, &self.params, z)?;
        let t = self.mode.seq_len();
        let probs = g.value(lp).data().iter().map(|v| v.exp()).collect();
        Ok(Tensor::from_vec(vec![t, 2], probs))
    }
}

/// Factor contributed by each masked position for `outcome`: the edited
/// probability where the outcome edits, the not-edited probability elsewhere.
/// Positions are listed in ascending order.
pub fn per_position_edit_probs(
    model: &ProportionModel,
    branch: usize,
    reference: &ReferenceSequence,
    outcome: EditSet,
    mask: &EditMask,
) -> Result<Vec<f64>, ModelError> {
    let allowed = mask.as_edit_set().bits();
    let stray = outcome.bits() & !allowed;
    if stray != 0 {
        return Err(ModelError::IllegalOutcome {
            position: stray.trailing_zeros() as usize + 1,
        });
    }
    let probs = model.position_probs(branch, reference, outcome)?;
    let offset = mask.offset();
    Ok(mask
        .flags()
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(t, _)| {
            let col = if outcome.contains(t - offset) { 0 } else { 1 };
            probs.at2(t, col)
        })
        .collect())
}
