use super::stage::{correlations, run_stage, BatchLoss, Part, StageSummary, ValRow, Validation};
use super::{
    efficiency_loss, efficiency_loss_graph, proportion_loss, proportion_loss_graph,
    BalancedSampler, TrainConfig, TrainError, TrainingLog,
};
use crate::data::{
    derive_efficiency_targets, derive_proportion_targets, LibraryDataset, ProportionTarget,
};
use crate::models::{
    EditorSpec, EfficiencyModel, MultiTaskModel, OneStageModel, ProportionModel, ScoreGroup,
    TwoStageModel,
};
use crate::numcore::{derive_seed, Graph, ParamStore};
use crate::seqcore::{EditSet, ReferenceSequence};

const VALIDATION_CHUNK: usize = 256;

/// Training and validation references of one editor.
#[derive(Clone, Copy, Debug)]
pub struct EditorSplit<'a> {
    pub train: &'a LibraryDataset,
    pub val: &'a LibraryDataset,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub log: TrainingLog,
    pub stages: Vec<StageSummary>,
}

impl TrainReport {
    fn absorb(&mut self, other: TrainReport) {
        self.log.extend(other.log);
        self.stages.extend(other.stages);
    }
}

/// Every observed outcome of each reference (wild type included) with its proportion.
pub fn full_distribution_targets(ds: &LibraryDataset) -> Vec<ProportionTarget> {
    ds.references
        .iter()
        .map(|r| ProportionTarget {
            reference_id: r.id.clone(),
            outcomes: r.outcomes.iter().map(|o| o.edits()).collect(),
            probabilities: r.outcomes.iter().map(|o| o.proportion).collect(),
        })
        .collect()
}

fn branch_for(editors: &[EditorSpec], ds: &LibraryDataset) -> Result<usize, TrainError> {
    let i = editors
        .iter()
        .position(|e| e.id == ds.editor_id)
        .ok_or_else(|| TrainError::UnknownEditor(ds.editor_id.clone()))?;
    if editors[i].class != ds.editor {
        return Err(TrainError::InvalidConfig(format!(
            "editor {} is {} in the model but {} in the data",
            ds.editor_id,
            editors[i].class.name(),
            ds.editor.name()
        )));
    }
    Ok(i)
}

fn labels(data: &[EditorSplit]) -> Vec<String> {
    data.iter().map(|d| d.train.editor_id.clone()).collect()
}

fn split_name(stage: &str, kind: &str, label: &str, multi: bool) -> String {
    if multi {
        format!("{stage}/{kind}/{label}")
    } else {
        format!("{stage}/{kind}")
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// `P(edited)` from logits rows `[l_edited, l_not]`.
fn edited_probs(logits: &[f64]) -> Vec<f64> {
    logits
        .chunks(2)
        .map(|l| 1.0 / (1.0 + (l[1] - l[0]).exp()))
        .collect()
}

pub(crate) struct EffData<'a> {
    pub branch: usize,
    pub refs: Vec<&'a ReferenceSequence>,
    pub targets: Vec<f64>,
}

impl<'a> EffData<'a> {
    pub(crate) fn new(ds: &'a LibraryDataset, branch: usize) -> Self {
        EffData {
            branch,
            refs: ds.references.iter().map(|r| &r.reference).collect(),
            targets: derive_efficiency_targets(ds)
                .into_iter()
                .map(|t| t.p_edited)
                .collect(),
        }
    }
}

/// Summed efficiency loss over the editors' shares of one batch.
pub(crate) fn efficiency_batch_loss(
    g: &mut Graph,
    model: &EfficiencyModel,
    store: &ParamStore,
    data: &[EffData],
    plan: &[Vec<usize>],
    dropout: f64,
) -> Result<BatchLoss, TrainError> {
    let mut total = None;
    let mut parts = Vec::new();
    for (key, (d, idx)) in data.iter().zip(plan).enumerate() {
        if idx.is_empty() {
            continue;
        }
        let refs: Vec<_> = idx.iter().map(|&i| d.refs[i]).collect();
        let targets: Vec<f64> = idx.iter().map(|&i| d.targets[i]).collect();
        let logits = model.logits(g, store, d.branch, &refs, dropout)?;
        let preds = edited_probs(g.value(logits).data());
        let loss = efficiency_loss_graph(g, logits, &targets)?;
        parts.push(Part {
            key,
            loss_sum: g.value(loss).item(),
            examples: idx.len(),
            preds,
            targets,
        });
        total = Some(match total {
            None => loss,
            Some(t) => g.add(t, loss)?,
        });
    }
    let loss = total.ok_or_else(|| TrainError::InvalidConfig("empty training batch".into()))?;
    Ok(BatchLoss { loss, parts })
}

fn efficiency_predict(
    model: &EfficiencyModel,
    store: &ParamStore,
    branch: usize,
    refs: &[&ReferenceSequence],
) -> Result<Vec<f64>, TrainError> {
    let mut out = Vec::with_capacity(refs.len());
    for chunk in refs.chunks(VALIDATION_CHUNK) {
        let mut g = Graph::inference();
        let logits = model.logits(&mut g, store, branch, chunk, 0.0)?;
        out.extend(edited_probs(g.value(logits).data()));
    }
    Ok(out)
}

const EFFICIENCY: &str = "efficiency";

/// Train the efficiency model on one or more editors with balanced batches.
/// Epochs are selected by the (mean over editors) validation Spearman.
pub fn train_efficiency(
    model: &mut EfficiencyModel,
    data: &[EditorSplit],
    config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::InvalidConfig("no training data".into()));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for d in data {
        let branch = branch_for(&model.editors, d.train)?;
        train.push(EffData::new(d.train, branch));
        val.push(EffData::new(d.val, branch_for(&model.editors, d.val)?));
    }
    let sizes: Vec<usize> = train.iter().map(|d| d.refs.len()).collect();
    let mut sampler = BalancedSampler::new(
        &sizes,
        config.batch_size,
        derive_seed(config.seed, "sampler/efficiency"),
    )?;
    let labels = labels(data);
    let multi = labels.len() > 1;
    let mut log = TrainingLog::default();
    let mut params = std::mem::take(&mut model.params);
    let model_ref: &EfficiencyModel = model;
    let result = run_stage(
        EFFICIENCY,
        &labels,
        &mut params,
        config,
        sampler.batches_per_epoch(),
        || sampler.epoch(),
        |g, store, plan| efficiency_batch_loss(g, model_ref, store, &train, plan, config.dropout),
        |store| {
            let mut rows = Vec::new();
            let mut scores = Vec::new();
            let mut losses = Vec::new();
            for (d, label) in val.iter().zip(&labels) {
                let preds = efficiency_predict(model_ref, store, d.branch, &d.refs)?;
                let loss = if d.refs.is_empty() {
                    f64::NAN
                } else {
                    efficiency_loss(&preds, &d.targets)? / d.refs.len() as f64
                };
                let (r, rho) = correlations(&preds, &d.targets);
                rows.push(ValRow {
                    split: split_name(EFFICIENCY, "val", label, multi),
                    loss,
                    pearson: r,
                    spearman: rho,
                });
                scores.push(rho);
                losses.push(loss);
            }
            Ok(Validation {
                rows,
                selection: mean(&scores),
                selection_loss: mean(&losses),
            })
        },
        &mut log,
    );
    model.params = params;
    let summary = result?;
    Ok(TrainReport {
        log,
        stages: vec![summary],
    })
}

/// Validation reference seen through the full two-stage composition.
struct ComposeRow {
    p_edited: f64,
    wt_observed: f64,
    target: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum TargetKind {
    /// Wild type removed, renormalised over edited outcomes.
    Conditional,
    /// Wild type included.
    Full,
}

pub(crate) struct PropData<'a> {
    pub branch: usize,
    pub refs: Vec<&'a ReferenceSequence>,
    pub targets: Vec<ProportionTarget>,
    compose: Option<Vec<ComposeRow>>,
}

impl<'a> PropData<'a> {
    fn new(ds: &'a LibraryDataset, branch: usize, kind: TargetKind) -> Self {
        let targets = match kind {
            TargetKind::Conditional => derive_proportion_targets(ds),
            TargetKind::Full => full_distribution_targets(ds),
        };
        let refs = targets
            .iter()
            .map(|t| {
                &ds.references
                    .iter()
                    .find(|r| r.id == t.reference_id)
                    .expect("targets come from this dataset")
                    .reference
            })
            .collect();
        PropData {
            branch,
            refs,
            targets,
            compose: None,
        }
    }

    /// Attach efficiency predictions so validation can score full distributions.
    fn with_composition(mut self, ds: &LibraryDataset, p_edited: &[f64]) -> Self {
        let rows = ds
            .references
            .iter()
            .zip(p_edited)
            .map(|(r, &p)| ComposeRow {
                p_edited: p,
                wt_observed: r.wild_type().map_or(0.0, |o| o.proportion),
                target: self.targets.iter().position(|t| t.reference_id == r.id),
            })
            .collect();
        self.compose = Some(rows);
        self
    }

    fn group(&self, i: usize) -> ScoreGroup<'_> {
        ScoreGroup {
            reference: self.refs[i],
            edits: &self.targets[i].outcomes,
        }
    }
}

/// Summed proportion loss (each editor's term is a mean over its references).
pub(crate) fn proportion_batch_loss(
    g: &mut Graph,
    model: &ProportionModel,
    store: &ParamStore,
    data: &[PropData],
    plan: &[Vec<usize>],
    dropout: f64,
) -> Result<BatchLoss, TrainError> {
    let mut total = None;
    let mut parts = Vec::new();
    for (key, (d, idx)) in data.iter().zip(plan).enumerate() {
        if idx.is_empty() {
            continue;
        }
        let groups: Vec<ScoreGroup> = idx.iter().map(|&i| d.group(i)).collect();
        let lp = model.log_normalized(g, store, d.branch, &groups, dropout)?;
        let target_slices: Vec<&[f64]> = idx
            .iter()
            .map(|&i| d.targets[i].probabilities.as_slice())
            .collect();
        let preds = g.value(lp).data().iter().map(|v| v.exp()).collect();
        let loss = proportion_loss_graph(g, lp, &target_slices)?;
        parts.push(Part {
            key,
            loss_sum: g.value(loss).item() * idx.len() as f64,
            examples: idx.len(),
            preds,
            targets: target_slices.concat(),
        });
        total = Some(match total {
            None => loss,
            Some(t) => g.add(t, loss)?,
        });
    }
    let loss = total.ok_or_else(|| TrainError::InvalidConfig("empty training batch".into()))?;
    Ok(BatchLoss { loss, parts })
}

/// Predicted distributions over each target's support, inference mode.
fn proportion_predict(
    model: &ProportionModel,
    store: &ParamStore,
    d: &PropData,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let mut out = Vec::with_capacity(d.targets.len());
    let mut start = 0;
    while start < d.targets.len() {
        let mut end = start;
        let mut outcomes = 0;
        while end < d.targets.len()
            && (end == start || outcomes + d.targets[end].outcomes.len() <= VALIDATION_CHUNK)
        {
            outcomes += d.targets[end].outcomes.len();
            end += 1;
        }
        let groups: Vec<ScoreGroup> = (start..end).map(|i| d.group(i)).collect();
        let mut g = Graph::inference();
        let lp = model.log_normalized(&mut g, store, d.branch, &groups, 0.0)?;
        let values = g.value(lp).data();
        let mut offset = 0;
        for gr in &groups {
            out.push(
                values[offset..offset + gr.edits.len()]
                    .iter()
                    .map(|v| v.exp())
                    .collect(),
            );
            offset += gr.edits.len();
        }
        start = end;
    }
    Ok(out)
}

fn proportion_validation(
    model: &ProportionModel,
    store: &ParamStore,
    stage: &str,
    kind: TargetKind,
    data: &[PropData],
    labels: &[String],
) -> Result<Validation, TrainError> {
    let multi = labels.len() > 1;
    let mut rows = Vec::new();
    let mut scores = Vec::new();
    let mut losses = Vec::new();
    for (d, label) in data.iter().zip(labels) {
        let preds = proportion_predict(model, store, d)?;
        let targets: Vec<Vec<f64>> = d.targets.iter().map(|t| t.probabilities.clone()).collect();
        let loss = if preds.is_empty() {
            f64::NAN
        } else {
            proportion_loss(&preds, &targets)?
        };
        let (mut all_p, mut all_o, mut nw_p, mut nw_o) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        match kind {
            TargetKind::Conditional => {
                nw_p = preds.concat();
                nw_o = targets.concat();
                if let Some(compose) = &d.compose {
                    for c in compose {
                        all_p.push(1.0 - c.p_edited);
                        all_o.push(c.wt_observed);
                        if let Some(j) = c.target {
                            for (p, t) in preds[j].iter().zip(&targets[j]) {
                                all_p.push(c.p_edited * p);
                                all_o.push((1.0 - c.wt_observed) * t);
                            }
                        }
                    }
                }
            }
            TargetKind::Full => {
                all_p = preds.concat();
                all_o = targets.concat();
                for (i, t) in d.targets.iter().enumerate() {
                    let edited: Vec<usize> = (0..t.outcomes.len())
                        .filter(|&k| t.outcomes[k] != EditSet::EMPTY)
                        .collect();
                    let ps: f64 = edited.iter().map(|&k| preds[i][k]).sum();
                    let os: f64 = edited.iter().map(|&k| targets[i][k]).sum();
                    if ps > 0.0 && os > 0.0 {
                        nw_p.extend(edited.iter().map(|&k| preds[i][k] / ps));
                        nw_o.extend(edited.iter().map(|&k| targets[i][k] / os));
                    }
                }
            }
        }
        let (r, rho) = correlations(&nw_p, &nw_o);
        let nonwild = ValRow {
            split: split_name(stage, "val-nonwild", label, multi),
            loss,
            pearson: r,
            spearman: rho,
        };
        let mut selection = rho;
        if !all_p.is_empty() {
            let (r, rho) = correlations(&all_p, &all_o);
            rows.push(ValRow {
                split: split_name(stage, "val", label, multi),
                loss,
                pearson: r,
                spearman: rho,
            });
            selection = rho;
        }
        rows.push(nonwild);
        scores.push(selection);
        losses.push(loss);
    }
    Ok(Validation {
        rows,
        selection: mean(&scores),
        selection_loss: mean(&losses),
    })
}

fn run_proportion_stage(
    model: &mut ProportionModel,
    stage: &str,
    kind: TargetKind,
    train: Vec<PropData>,
    val: Vec<PropData>,
    labels: Vec<String>,
    config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    let sizes: Vec<usize> = train.iter().map(|d| d.targets.len()).collect();
    let mut sampler = BalancedSampler::new(
        &sizes,
        config.batch_size,
        derive_seed(config.seed, &format!("sampler/{stage}")),
    )?;
    let mut log = TrainingLog::default();
    let mut params = std::mem::take(&mut model.params);
    let model_ref: &ProportionModel = model;
    let result = run_stage(
        stage,
        &labels,
        &mut params,
        config,
        sampler.batches_per_epoch(),
        || sampler.epoch(),
        |g, store, plan| proportion_batch_loss(g, model_ref, store, &train, plan, config.dropout),
        |store| proportion_validation(model_ref, store, stage, kind, &val, &labels),
        &mut log,
    );
    model.params = params;
    let summary = result?;
    Ok(TrainReport {
        log,
        stages: vec![summary],
    })
}

const PROPORTION: &str = "proportion";
const ONE_STAGE: &str = "one-stage";

/// Train the proportion model on edited outcomes. With an efficiency model,
/// validation also scores the composed full distribution and selects epochs on
/// it; otherwise epochs are selected on the conditional alone.
pub fn train_proportion(
    model: &mut ProportionModel,
    data: &[EditorSplit],
    config: &TrainConfig,
    efficiency: Option<&EfficiencyModel>,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::InvalidConfig("no training data".into()));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for d in data {
        let branch = branch_for(&model.editors, d.train)?;
        train.push(PropData::new(d.train, branch, TargetKind::Conditional));
        let mut v = PropData::new(
            d.val,
            branch_for(&model.editors, d.val)?,
            TargetKind::Conditional,
        );
        if let Some(eff) = efficiency {
            let eb = branch_for(&eff.editors, d.val)?;
            let refs: Vec<_> = d.val.references.iter().map(|r| &r.reference).collect();
            let p = efficiency_predict(eff, &eff.params, eb, &refs)?;
            v = v.with_composition(d.val, &p);
        }
        val.push(v);
    }
    run_proportion_stage(
        model,
        PROPORTION,
        TargetKind::Conditional,
        train,
        val,
        labels(data),
        config,
    )
}

/// Train the one-stage model on full distributions (wild type included).
/// Validation logs all-outcome and renormalised non-wild correlations and
/// selects on the former.
pub fn train_one_stage(
    model: &mut OneStageModel,
    data: EditorSplit,
    config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    let p = &mut model.proportion;
    let train = vec![PropData::new(
        data.train,
        branch_for(&p.editors, data.train)?,
        TargetKind::Full,
    )];
    let val = vec![PropData::new(
        data.val,
        branch_for(&p.editors, data.val)?,
        TargetKind::Full,
    )];
    run_proportion_stage(
        p,
        ONE_STAGE,
        TargetKind::Full,
        train,
        val,
        labels(&[data]),
        config,
    )
}

/// Efficiency stage, then the proportion stage validated through the composition.
pub fn train_two_stage(
    model: &mut TwoStageModel,
    data: EditorSplit,
    efficiency: &TrainConfig,
    proportion: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    let mut report = train_efficiency(&mut model.efficiency, &[data], efficiency)?;
    report.absorb(train_proportion(
        &mut model.proportion,
        &[data],
        proportion,
        Some(&model.efficiency),
    )?);
    Ok(report)
}

/// Both stages of the multi-task model with balanced per-editor batches;
/// selection uses the mean of the per-editor validation scores.
pub fn train_multitask(
    model: &mut MultiTaskModel,
    data: &[EditorSplit],
    efficiency: &TrainConfig,
    proportion: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    let mut report = train_efficiency(&mut model.efficiency, data, efficiency)?;
    report.absorb(train_proportion(
        &mut model.proportion,
        data,
        proportion,
        Some(&model.efficiency),
    )?);
    Ok(report)
}

#[cfg(test)]
pub(crate) fn prop_data<'a>(ds: &'a LibraryDataset, branch: usize) -> PropData<'a> {
    PropData::new(ds, branch, TargetKind::Conditional)
}
