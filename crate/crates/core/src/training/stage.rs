use std::time::Instant;

use super::{LogRow, TrainConfig, TrainError, TrainingLog};
use crate::eval::{pearson, spearman};
use crate::models::ModelError;
use crate::numcore::{
    cyclic_lr, derive_seed, l2_penalty, AdamState, Graph, NumError, ParamId, ParamStore, Var,
};

/// One editor's share of a training batch.
pub(crate) struct Part {
    pub key: usize,
    /// Sum over the part's references of their per-reference loss.
    pub loss_sum: f64,
    pub examples: usize,
    pub preds: Vec<f64>,
    pub targets: Vec<f64>,
}

pub(crate) struct BatchLoss {
    /// Data loss on the tape, without the weight penalty.
    pub loss: Var,
    pub parts: Vec<Part>,
}

pub(crate) struct ValRow {
    pub split: String,
    pub loss: f64,
    pub pearson: f64,
    pub spearman: f64,
}

pub(crate) struct Validation {
    pub rows: Vec<ValRow>,
    /// Compared across epochs; higher is better.
    pub selection: f64,
    /// Breaks exact ties in `selection`; lower is better.
    pub selection_loss: f64,
}

/// Result of one training stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSummary {
    pub stage: String,
    /// Epoch (1-based) whose parameters were kept; `None` if no epoch had a finite score.
    pub best_epoch: Option<usize>,
    pub best_score: f64,
    pub epochs: usize,
}

pub(crate) fn correlations(preds: &[f64], targets: &[f64]) -> (f64, f64) {
    (
        pearson(preds, targets).unwrap_or(f64::NAN),
        spearman(preds, targets).unwrap_or(f64::NAN),
    )
}

fn is_non_finite(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::Num(NumError::NonFinite { .. })
            | TrainError::Model(ModelError::Num(NumError::NonFinite { .. }))
    )
}

struct Best {
    epoch: usize,
    score: f64,
    loss: f64,
    params: ParamStore,
}

/// Adam with a triangular cyclic learning rate, dropout seeded per step, and
/// validation after every epoch. On return `params` holds the best epoch's values.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_stage<P>(
    name: &str,
    part_labels: &[String],
    params: &mut ParamStore,
    config: &TrainConfig,
    batches_per_epoch: usize,
    mut plan: impl FnMut() -> Vec<P>,
    mut step: impl FnMut(&mut Graph, &ParamStore, &P) -> Result<BatchLoss, TrainError>,
    mut validate: impl FnMut(&ParamStore) -> Result<Validation, TrainError>,
    log: &mut TrainingLog,
) -> Result<StageSummary, TrainError> {
    config.validate()?;
    let ids: Vec<ParamId> = params.ids().collect();
    let max_lr = config.base_lr * config.lr_max_multiplier;
    let cycle = ((config.cycle_epochs * batches_per_epoch.max(1)) as u64).max(2);
    let mut adam = AdamState::new();
    let mut step_no: u64 = 0;
    let mut best: Option<Best> = None;
    let multi = part_labels.len() > 1;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let diverged = || TrainError::DivergedLoss {
            stage: name.to_string(),
            epoch,
        };
        let mut lr = config.base_lr;
        let mut loss_sum = vec![0.0; part_labels.len()];
        let mut examples = vec![0usize; part_labels.len()];
        let mut preds = vec![Vec::new(); part_labels.len()];
        let mut targets = vec![Vec::new(); part_labels.len()];
        for batch in plan() {
            lr = cyclic_lr(step_no, config.base_lr, max_lr, cycle)?;
            let mut g = Graph::new(
                true,
                derive_seed(config.seed, &format!("dropout/{name}/{step_no}")),
            );
            let computed =
                (|| -> Result<(f64, crate::numcore::ParamGrads, Vec<Part>), TrainError> {
                    let out = step(&mut g, params, &batch)?;
                    let penalty = l2_penalty(&mut g, params, &ids, config.l2)?;
                    let objective = g.add(out.loss, penalty)?;
                    let value = g.value(objective).item();
                    if !value.is_finite() {
                        return Ok((value, Default::default(), out.parts));
                    }
                    let grads = g.backward(objective)?.param_grads();
                    Ok((value, grads, out.parts))
                })();
            let (value, grads, parts) = match computed {
                Err(e) if is_non_finite(&e) => return Err(diverged()),
                other => other?,
            };
            if !value.is_finite() || !grads.all_finite() {
                return Err(diverged());
            }
            adam.step(params, &grads, lr)?;
            step_no += 1;
            for p in parts {
                loss_sum[p.key] += p.loss_sum;
                examples[p.key] += p.examples;
                preds[p.key].extend(p.preds);
                targets[p.key].extend(p.targets);
            }
        }
        let wall_ms = |start: Instant| {
            if config.log_timing {
                start.elapsed().as_millis() as u64
            } else {
                0
            }
        };
        let total_examples: usize = examples.iter().sum();
        let all_preds: Vec<f64> = preds.concat();
        let all_targets: Vec<f64> = targets.concat();
        let (r, rho) = correlations(&all_preds, &all_targets);
        log.push(LogRow {
            epoch,
            split: format!("{name}/train"),
            loss: loss_sum.iter().sum::<f64>() / total_examples.max(1) as f64,
            pearson: r,
            spearman: rho,
            lr,
            wall_ms: wall_ms(start),
        });
        if multi {
            for (k, label) in part_labels.iter().enumerate() {
                let (r, rho) = correlations(&preds[k], &targets[k]);
                log.push(LogRow {
                    epoch,
                    split: format!("{name}/train/{label}"),
                    loss: loss_sum[k] / examples[k].max(1) as f64,
                    pearson: r,
                    spearman: rho,
                    lr,
                    wall_ms: 0,
                });
            }
        }
        let val = validate(params)?;
        let elapsed = wall_ms(start);
        for row in val.rows {
            log.push(LogRow {
                epoch,
                split: row.split,
                loss: row.loss,
                pearson: row.pearson,
                spearman: row.spearman,
                lr,
                wall_ms: elapsed,
            });
        }
        let improved = match &best {
            None => val.selection.is_finite(),
            Some(b) => {
                val.selection > b.score || (val.selection == b.score && val.selection_loss < b.loss)
            }
        };
        if improved {
            best = Some(Best {
                epoch,
                score: val.selection,
                loss: val.selection_loss,
                params: params.clone(),
            });
        }
        log::debug!("{name} epoch {epoch}: selection {:.4}", val.selection);
    }
    match best {
        Some(b) => {
            *params = b.params;
            Ok(StageSummary {
                stage: name.to_string(),
                best_epoch: Some(b.epoch),
                best_score: b.score,
                epochs: config.epochs,
            })
        }
        None => {
            log::warn!(
                "{name}: no epoch had a finite validation score, keeping the final parameters"
            );
            Ok(StageSummary {
                stage: name.to_string(),
                best_epoch: None,
                best_score: f64::NAN,
                epochs: config.epochs,
            })
        }
    }
}
