use rand::Rng;

use super::{editor_index, EditorSpec, ModelError};
use crate::nn::{batch_one_hot, ConvStack, MlpHead, TRUNK_FILTERS};
use crate::numcore::{Graph, ParamStore, Var};
use crate::seqcore::{ReferenceSequence, RepresentationMode};

/// Filters of the conv layers shared by every editor in the multi-task model.
pub const MULTITASK_SHARED_FILTERS: [usize; 2] = [32, 64];
/// Filters of each editor's own conv layers in the multi-task model.
pub const MULTITASK_BRANCH_FILTERS: [usize; 2] = [128, 128];

const PREDICT_CHUNK: usize = 256;

/// Editor-specific tail: optional extra conv layers, then the MLP head.
#[derive(Clone, Debug)]
pub struct EfficiencyBranch {
    pub convs: ConvStack,
    pub head: MlpHead,
}

/// Conv trunk and MLP head predicting `P(edited | reference)`.
///
/// Single-task models have one branch with no extra convs after a 32/64/128 trunk;
/// multi-task models share the first two convs and give each editor two more.
#[derive(Clone, Debug)]
pub struct EfficiencyModel {
    pub mode: RepresentationMode,
    pub editors: Vec<EditorSpec>,
    pub shared: ConvStack,
    pub branches: Vec<EfficiencyBranch>,
    pub params: ParamStore,
}

impl EfficiencyModel {
    pub fn single(mode: RepresentationMode, editor: EditorSpec, rng: &mut impl Rng) -> Self {
        Self::build(mode, vec![editor], &TRUNK_FILTERS, &[], rng)
    }

    pub fn multi(mode: RepresentationMode, editors: Vec<EditorSpec>, rng: &mut impl Rng) -> Self {
        Self::build(
            mode,
            editors,
            &MULTITASK_SHARED_FILTERS,
            &MULTITASK_BRANCH_FILTERS,
            rng,
        )
    }

    fn build(
        mode: RepresentationMode,
        editors: Vec<EditorSpec>,
        shared_filters: &[usize],
        branch_filters: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let mut params = ParamStore::new();
        let shared = ConvStack::new(&mut params, "eff.shared", 4, shared_filters, rng);
        let t = mode.seq_len();
        let (t_shared, c_shared) = (shared.out_len(t), shared.out_channels());
        let branches = editors
            .iter()
            .map(|e| {
                let name = format!("eff.{}", e.id);
                let convs = ConvStack::new(&mut params, &name, c_shared, branch_filters, rng);
                let width = if branch_filters.is_empty() {
                    t_shared * c_shared
                } else {
                    convs.out_len(t_shared) * convs.out_channels()
                };
                let head = MlpHead::new(&mut params, &format!("{name}.head"), width, rng);
                EfficiencyBranch { convs, head }
            })
            .collect();
        EfficiencyModel {
            mode,
            editors,
            shared,
            branches,
            params,
        }
    }

    pub fn editor_index(&self, id: &str) -> Result<usize, ModelError> {
        editor_index(&self.editors, id)
    }

    pub(crate) fn check_mode(&self, reference: &ReferenceSequence) -> Result<(), ModelError> {
        if reference.mode() != self.mode {
            return Err(ModelError::ModeMismatch {
                expected: self.mode,
                found: reference.mode(),
            });
        }
        Ok(())
    }

    /// Pre-softmax logits `[B, 2]`, column 0 = edited.
    pub fn logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        branch: usize,
        refs: &[&ReferenceSequence],
        dropout: f64,
    ) -> Result<Var, ModelError> {
        for r in refs {
            self.check_mode(r)?;
        }
        let bases: Vec<_> = refs.iter().map(|r| r.bases()).collect();
        let views: Vec<&[_]> = bases.iter().map(Vec::as_slice).collect();
        let x = g.constant(batch_one_hot(&views)?);
        let h = self.shared.forward(g, store, x)?;
        let b = &self.branches[branch];
        let h = b.convs.features(g, store, h)?;
        Ok(b.head.logits(g, store, h, dropout)?)
    }

    /// `P(edited)` for each reference, inference mode.
    pub fn predict(
        &self,
        branch: usize,
        refs: &[&ReferenceSequence],
    ) -> Result<Vec<f64>, ModelError> {
        let mut out = Vec::with_capacity(refs.len());
        for chunk in refs.chunks(PREDICT_CHUNK) {
            let mut g = Graph::inference();
            let z = self.logits(&mut g, &self.params, branch, chunk, 0.0)?;
            let p = g.softmax(z, 1)?;
            out.extend(g.value(p).data().chunks(2).map(|pair| pair[0]));
        }
        Ok(out)
    }

    /// Single-reference `P(edited)` for the first (or only) editor.
    pub fn efficiency_forward(&self, reference: &ReferenceSequence) -> Result<f64, ModelError> {
        Ok(self.predict(0, &[reference])?[0])
    }
}
