use super::TrainError;
use crate::numcore::{Graph, Tensor, Var};

/// Predicted probabilities are floored here before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

const SUM_TOLERANCE: f64 = 1e-6;

fn check_distribution(p: &[f64], what: &str) -> Result<(), TrainError> {
    if p.is_empty() {
        return Err(TrainError::InvalidDistribution(format!("{what} is empty")));
    }
    if let Some(v) = p
        .iter()
        .find(|v| !(v.is_finite() && (0.0..=1.0 + SUM_TOLERANCE).contains(*v)))
    {
        return Err(TrainError::InvalidDistribution(format!(
            "{what} has entry {v}"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(TrainError::InvalidDistribution(format!(
            "{what} sums to {sum}"
        )));
    }
    Ok(())
}

/// `D_KL(target || pred)` with `0 log 0 = 0` and `pred` floored at [`PROBABILITY_FLOOR`].
pub fn kl_divergence(target: &[f64], pred: &[f64]) -> Result<f64, TrainError> {
    if target.len() != pred.len() {
        return Err(TrainError::SupportMismatch {
            target: target.len(),
            pred: pred.len(),
        });
    }
    check_distribution(target, "target")?;
    check_distribution(pred, "prediction")?;
    Ok(target
        .iter()
        .zip(pred)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, q)| t * (t.ln() - q.max(PROBABILITY_FLOOR).ln()))
        .sum())
}

/// Bernoulli KL summed over the batch; arguments are `P(edited)` per reference.
pub fn efficiency_loss(pred: &[f64], target: &[f64]) -> Result<f64, TrainError> {
    if pred.len() != target.len() {
        return Err(TrainError::SupportMismatch {
            target: target.len(),
            pred: pred.len(),
        });
    }
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| kl_divergence(&[t, 1.0 - t], &[p, 1.0 - p]))
        .sum()
}

/// Mean over references of the KL between target and predicted outcome distributions.
pub fn proportion_loss(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64, TrainError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TrainError::SupportMismatch {
            target: target.len(),
            pred: pred.len(),
        });
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| kl_divergence(t, p))
        .sum::<Result<f64, _>>()?;
    Ok(total / pred.len() as f64)
}

fn entropy_term(t: &[f64]) -> f64 {
    t.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum()
}

/// `sum_i t_i ln t_i - sum_i t_i max(lp_i, ln floor)` on the tape, scaled by `scale`.
fn weighted_kl(
    g: &mut Graph,
    log_probs: Var,
    weights: Vec<f64>,
    scale: f64,
) -> Result<Var, TrainError> {
    let shape = g.shape(log_probs).to_vec();
    let constant = entropy_term(&weights);
    let w = g.constant(Tensor::new(shape, weights)?);
    let lp = g.clamp_min(log_probs, PROBABILITY_FLOOR.ln())?;
    let cross = g.mul(lp, w)?;
    let cross = g.sum(cross)?;
    let kl = g.scale(cross, -1.0)?;
    let kl = g.add_scalar(kl, constant)?;
    Ok(g.scale(kl, scale)?)
}

/// Efficiency loss from logits `[B, 2]` (column 0 = edited) against `P(edited)` targets.
pub fn efficiency_loss_graph(
    g: &mut Graph,
    logits: Var,
    targets: &[f64],
) -> Result<Var, TrainError> {
    if g.shape(logits) != [targets.len(), 2] {
        return Err(TrainError::SupportMismatch {
            target: targets.len(),
            pred: g.shape(logits).first().copied().unwrap_or(0),
        });
    }
    let lp = g.log_softmax(logits, 1)?;
    let weights = targets.iter().flat_map(|&t| [t, 1.0 - t]).collect();
    weighted_kl(g, lp, weights, 1.0)
}

/// Proportion loss from group-normalised log-probabilities `[N]`, one target slice per reference.
pub fn proportion_loss_graph(
    g: &mut Graph,
    log_probs: Var,
    targets: &[&[f64]],
) -> Result<Var, TrainError> {
    let n: usize = targets.iter().map(|t| t.len()).sum();
    if g.shape(log_probs) != [n] || targets.is_empty() {
        return Err(TrainError::SupportMismatch {
            target: n,
            pred: g.shape(log_probs).iter().product(),
        });
    }
    let weights = targets.iter().flat_map(|t| t.iter().copied()).collect();
    weighted_kl(g, log_probs, weights, 1.0 / targets.len() as f64)
}
