use super::graph::{Graph, Var};
use super::params::{ParamGrads, ParamId, ParamStore};
use super::NumError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter Adam moments plus the shared step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Option<Vec<f64>>>,
    second: Vec<Option<Vec<f64>>>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            ..Default::default()
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.first.get(id.index()).and_then(|m| m.as_deref())
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.second.get(id.index()).and_then(|m| m.as_deref())
    }

    /// One bias-corrected Adam update for every parameter that has a gradient.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &ParamGrads,
        lr: f64,
    ) -> Result<(), NumError> {
        if !(lr > 0.0) {
            return Err(NumError::InvalidArgument(format!(
                "learning rate {lr} must be positive"
            )));
        }
        for (id, g) in grads.iter() {
            let shape = store.get(id).shape().to_vec();
            if g.len() != store.get(id).len() {
                return Err(NumError::ShapeMismatch {
                    op: "adam_step",
                    left: shape,
                    right: vec![g.len()],
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        for (id, g) in grads.iter() {
            let n = g.len();
            let m = self.first[id.index()].get_or_insert_with(|| vec![0.0; n]);
            let v = self.second[id.index()].get_or_insert_with(|| vec![0.0; n]);
            let theta = store.get_mut(id).data_mut();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Triangular cyclic learning rate: `base` at step 0, `max` at half cycle, `base` again at `cycle_len`.
pub fn cyclic_lr(step: u64, base: f64, max: f64, cycle_len: u64) -> Result<f64, NumError> {
    if !(base > 0.0 && base <= max) || cycle_len < 2 {
        return Err(NumError::InvalidSchedule(format!(
            "need 0 < base <= max and cycle_len >= 2, got base={base} max={max} cycle_len={cycle_len}"
        )));
    }
    let pos = (step % cycle_len) as f64 / cycle_len as f64;
    let tri = 1.0 - (2.0 * pos - 1.0).abs();
    Ok(base + (max - base) * tri)
}

/// `(lambda / 2) * sum ||theta||^2` over the given parameters, on the tape.
pub fn l2_penalty(
    g: &mut Graph,
    store: &ParamStore,
    params: &[ParamId],
    lambda: f64,
) -> Result<Var, NumError> {
    if lambda < 0.0 {
        return Err(NumError::InvalidArgument(format!(
            "lambda {lambda} must be >= 0"
        )));
    }
    let mut terms = Vec::with_capacity(params.len());
    for &id in params {
        let p = g.param(store, id);
        let sq = g.mul(p, p)?;
        terms.push(g.sum(sq)?);
    }
    let mut total = match terms.first() {
        Some(&t) => t,
        None => return Ok(g.constant(super::Tensor::scalar(0.0))),
    };
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    g.scale(total, lambda / 2.0)
}
