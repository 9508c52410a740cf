//! Central finite-difference verification of tape gradients.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::{NumError, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn eval_scalar(g: &Graph, v: Var) -> Result<f64, NumError> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(NumError::NonScalarLoss {
            shape: t.shape().to_vec(),
        });
    }
    Ok(t.item())
}

/// Max over coordinates of `|analytic - central difference| / max(1, |analytic|)`
/// for a scalar function of one tensor. Graphs are built in inference mode.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, NumError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, NumError>,
{
    let mut g = Graph::inference();
    let xv = g.leaf(x.clone(), true);
    let y = f(&mut g, xv)?;
    eval_scalar(&g, y)?;
    let grads = g.backward(y)?;
    let analytic = grads
        .wrt(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval_at = |t: Tensor| -> Result<f64, NumError> {
        let mut g = Graph::inference();
        let v = g.constant(t);
        let y = f(&mut g, v)?;
        eval_scalar(&g, y)
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval_at(plus)? - eval_at(minus)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// Same check against stored parameters. With `sample = Some((n, rng))` only `n`
/// randomly chosen coordinates are differenced; otherwise every coordinate is.
pub fn grad_check_params<F, R>(
    f: F,
    store: &ParamStore,
    h: f64,
    sample: Option<(usize, &mut R)>,
) -> Result<f64, NumError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, NumError>,
    R: Rng,
{
    let mut g = Graph::inference();
    let y = f(&mut g, store)?;
    eval_scalar(&g, y)?;
    let grads = g.backward(y)?.param_grads();

    let mut coords: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.get(id).len()).map(move |i| (id, i)))
        .collect();
    if let Some((n, rng)) = sample {
        if n < coords.len() {
            for i in 0..n {
                let j = rng.gen_range(i..coords.len());
                coords.swap(i, j);
            }
            coords.truncate(n);
        }
    }

    let mut scratch = store.clone();
    let mut eval_with = |id: ParamId, i: usize, delta: f64| -> Result<f64, NumError> {
        let orig = store.get(id).data()[i];
        scratch.get_mut(id).data_mut()[i] = orig + delta;
        let mut g = Graph::inference();
        let y = f(&mut g, &scratch);
        scratch.get_mut(id).data_mut()[i] = orig;
        eval_scalar(&g, y?)
    };

    let mut worst = 0.0f64;
    for (id, i) in coords {
        let analytic = grads.get(id).map_or(0.0, |g| g[i]);
        let numeric = (eval_with(id, i, h)? - eval_with(id, i, -h)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic, numeric));
    }
    Ok(worst)
}
