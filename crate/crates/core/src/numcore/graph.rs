//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive application in creation order, which is
//! already a topological order. [`Graph::backward`] walks the tape once in
//! reverse and consumes it.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{gemm, Strides};
use super::params::{ParamGrads, ParamId, ParamStore};
use super::rng::seeded;
use super::tensor::axis_extents;
use super::{NumError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    BatchMatMul {
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    Relu(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    LogSoftmax {
        input: Var,
        axis: usize,
    },
    GroupLogSoftmax {
        input: Var,
        groups: Vec<usize>,
    },
    Log(Var),
    ClampMin {
        input: Var,
        min: f64,
    },
    LayerNorm {
        input: Var,
        axis: usize,
        inv_std: Vec<f64>,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    SumAxis {
        input: Var,
        axis: usize,
    },
    Reshape(Var),
    Permute {
        input: Var,
        perm: Vec<usize>,
    },
    Conv1d {
        input: Var,
        weight: Var,
        kernel: usize,
        stride: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A computation tape. Training graphs carry a dropout RNG; inference graphs
/// treat dropout as the identity.
pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
    params: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new(training: bool, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            training,
            rng: seeded(seed),
            params: HashMap::new(),
        }
    }

    pub fn inference() -> Self {
        Self::new(false, 0)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input, never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone(), true);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub(crate) fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor,
        op: Op,
    ) -> Result<Var, NumError> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(NumError::NonFinite { op: op_name });
        }
        let requires_grad = op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub(crate) fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Reverse pass from a scalar loss. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients, NumError> {
        let loss_shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NumError::NonScalarLoss { shape: loss_shape });
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backward_node(&self.nodes, i, &g, &mut grads);
        }

        let mut params: Vec<(ParamId, Var)> = self.params.into_iter().collect();
        params.sort();
        Ok(Gradients { grads, params })
    }
}

/// Gradients of a scalar with respect to every leaf that required them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grads(&self) -> ParamGrads {
        let mut out = ParamGrads::new();
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                out.accumulate(id, g);
            }
        }
        out
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::BatchMatMul { a, b, .. } | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::Conv1d { input, weight, .. } => vec![*input, *weight],
        Op::Concat { inputs, .. } => inputs.clone(),
        Op::Gather { table: a, .. }
        | Op::Scale(a, _)
        | Op::Relu(a)
        | Op::Softmax { input: a, .. }
        | Op::LogSoftmax { input: a, .. }
        | Op::GroupLogSoftmax { input: a, .. }
        | Op::Log(a)
        | Op::ClampMin { input: a, .. }
        | Op::LayerNorm { input: a, .. }
        | Op::Dropout { input: a, .. }
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::SumAxis { input: a, .. }
        | Op::Reshape(a)
        | Op::Permute { input: a, .. } => vec![*a],
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, g: Vec<f64>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, x)| *b += x),
        slot @ None => *slot = Some(g),
    }
}

/// `(batch, m, k, n)` of a batched product, accepting rank 2 as a batch of one.
pub(crate) fn bmm_dims(
    a: &[usize],
    b: &[usize],
    trans_a: bool,
    trans_b: bool,
) -> Option<(usize, usize, usize, usize)> {
    if a.len() != b.len() || !(a.len() == 2 || a.len() == 3) {
        return None;
    }
    let (a, b) = (dims3(a), dims3(b));
    if a[0] != b[0] {
        return None;
    }
    let (m, ka) = if trans_a { (a[2], a[1]) } else { (a[1], a[2]) };
    let (kb, n) = if trans_b { (b[2], b[1]) } else { (b[1], b[2]) };
    (ka == kb).then_some((a[0], m, ka, n))
}

/// View a rank-2 shape as a batch of one.
pub(crate) fn dims3(shape: &[usize]) -> [usize; 3] {
    match shape {
        [r, c] => [1, *r, *c],
        [b, r, c] => [*b, *r, *c],
        _ => panic!("expected rank 2 or 3, got {shape:?}"),
    }
}

pub(crate) fn operand_strides(rows: usize, cols: usize, transposed: bool) -> Strides {
    // storage is rows x cols row-major; logical view is transposed when requested
    let _ = rows;
    if transposed {
        Strides::transposed(cols)
    } else {
        Strides::row_major(cols)
    }
}

fn backward_node(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::BatchMatMul {
            a,
            b,
            trans_a,
            trans_b,
        } => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            let (batch, m, k, n) = bmm_dims(av.shape(), bv.shape(), *trans_a, *trans_b)
                .expect("shapes validated in forward");
            let (da3, db3) = (dims3(av.shape()), dims3(bv.shape()));
            let sa = operand_strides(da3[1], da3[2], *trans_a);
            let sb = operand_strides(db3[1], db3[2], *trans_b);
            let sg = Strides::row_major(n);
            let (a_sz, b_sz) = (m * k, k * n);
            if nodes[a.0].requires_grad {
                let mut da = vec![0.0; av.len()];
                for t in 0..batch {
                    // dA (m x k) = dC (m x n) @ B^T (n x k), written through A's storage view
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        &g[t * m * n..],
                        sg,
                        &bv.data()[t * b_sz..],
                        sb.t(),
                        0.0,
                        &mut da[t * a_sz..],
                        sa,
                    );
                }
                accumulate(grads, nodes, *a, da);
            }
            if nodes[b.0].requires_grad {
                let mut db = vec![0.0; bv.len()];
                for t in 0..batch {
                    // dB (k x n) = A^T (k x m) @ dC (m x n)
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        &av.data()[t * a_sz..],
                        sa.t(),
                        &g[t * m * n..],
                        sg,
                        0.0,
                        &mut db[t * b_sz..],
                        sb,
                    );
                }
                accumulate(grads, nodes, *b, db);
            }
        }
        Op::Add(a, b) => {
            if nodes[a.0].requires_grad {
                accumulate(grads, nodes, *a, g.to_vec());
            }
            if nodes[b.0].requires_grad {
                let nb = nodes[b.0].value.len();
                let mut db = vec![0.0; nb];
                for chunk in g.chunks(nb) {
                    db.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
                }
                accumulate(grads, nodes, *b, db);
            }
        }
        Op::Mul(a, b) => {
            let av = nodes[a.0].value.data();
            let bv = nodes[b.0].value.data();
            let nb = bv.len();
            if nodes[a.0].requires_grad {
                let da = g
                    .chunks(nb)
                    .flat_map(|chunk| chunk.iter().zip(bv).map(|(x, y)| x * y))
                    .collect();
                accumulate(grads, nodes, *a, da);
            }
            if nodes[b.0].requires_grad {
                let mut db = vec![0.0; nb];
                for (gc, ac) in g.chunks(nb).zip(av.chunks(nb)) {
                    for ((d, x), y) in db.iter_mut().zip(gc).zip(ac) {
                        *d += x * y;
                    }
                }
                accumulate(grads, nodes, *b, db);
            }
        }
        Op::Scale(a, c) => {
            accumulate(grads, nodes, *a, g.iter().map(|x| x * c).collect());
        }
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = axis_extents(out.shape(), *axis);
            let total = out.shape()[*axis] * inner;
            let mut offset = 0;
            for v in inputs {
                let width = nodes[v.0].value.shape()[*axis] * inner;
                if nodes[v.0].requires_grad {
                    let mut dv = Vec::with_capacity(outer * width);
                    for o in 0..outer {
                        dv.extend_from_slice(&g[o * total + offset..o * total + offset + width]);
                    }
                    accumulate(grads, nodes, *v, dv);
                }
                offset += width;
            }
        }
        Op::Gather { table, indices } => {
            let tv = &nodes[table.0].value;
            let row = tv.len() / tv.shape()[0];
            let mut dt = vec![0.0; tv.len()];
            for (r, &idx) in indices.iter().enumerate() {
                let dst = &mut dt[idx * row..(idx + 1) * row];
                dst.iter_mut()
                    .zip(&g[r * row..(r + 1) * row])
                    .for_each(|(d, x)| *d += x);
            }
            accumulate(grads, nodes, *table, dt);
        }
        Op::Relu(a) => {
            let x = nodes[a.0].value.data();
            let da = g
                .iter()
                .zip(x)
                .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, da);
        }
        Op::Softmax { input, axis } => {
            let (outer, n, inner) = axis_extents(out.shape(), *axis);
            let y = out.data();
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for q in 0..inner {
                    let base = o * n * inner + q;
                    let dot: f64 = (0..n)
                        .map(|j| g[base + j * inner] * y[base + j * inner])
                        .sum();
                    for j in 0..n {
                        let idx = base + j * inner;
                        dx[idx] = y[idx] * (g[idx] - dot);
                    }
                }
            }
            accumulate(grads, nodes, *input, dx);
        }
        Op::LogSoftmax { input, axis } => {
            let (outer, n, inner) = axis_extents(out.shape(), *axis);
            let y = out.data();
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for q in 0..inner {
                    let base = o * n * inner + q;
                    let gsum: f64 = (0..n).map(|j| g[base + j * inner]).sum();
                    for j in 0..n {
                        let idx = base + j * inner;
                        dx[idx] = g[idx] - y[idx].exp() * gsum;
                    }
                }
            }
            accumulate(grads, nodes, *input, dx);
        }
        Op::GroupLogSoftmax { input, groups } => {
            let y = out.data();
            let mut dx = vec![0.0; y.len()];
            let mut start = 0;
            for &len in groups {
                let end = start + len;
                let gsum: f64 = g[start..end].iter().sum();
                for j in start..end {
                    dx[j] = g[j] - y[j].exp() * gsum;
                }
                start = end;
            }
            accumulate(grads, nodes, *input, dx);
        }
        Op::Log(a) => {
            let x = nodes[a.0].value.data();
            accumulate(
                grads,
                nodes,
                *a,
                g.iter().zip(x).map(|(gi, xi)| gi / xi).collect(),
            );
        }
        Op::ClampMin { input, min } => {
            let x = nodes[input.0].value.data();
            let dx = g
                .iter()
                .zip(x)
                .map(|(gi, &xi)| if xi > *min { *gi } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *input, dx);
        }
        Op::LayerNorm {
            input,
            axis,
            inv_std,
        } => {
            let (outer, n, inner) = axis_extents(out.shape(), *axis);
            let y = out.data();
            let mut dx = vec![0.0; y.len()];
            let nf = n as f64;
            for o in 0..outer {
                for q in 0..inner {
                    let base = o * n * inner + q;
                    let mut mean_g = 0.0;
                    let mut mean_gy = 0.0;
                    for j in 0..n {
                        let idx = base + j * inner;
                        mean_g += g[idx];
                        mean_gy += g[idx] * y[idx];
                    }
                    mean_g /= nf;
                    mean_gy /= nf;
                    let s = inv_std[o * inner + q];
                    for j in 0..n {
                        let idx = base + j * inner;
                        dx[idx] = s * (g[idx] - mean_g - y[idx] * mean_gy);
                    }
                }
            }
            accumulate(grads, nodes, *input, dx);
        }
        Op::Dropout { input, mask } => {
            accumulate(
                grads,
                nodes,
                *input,
                g.iter().zip(mask).map(|(a, b)| a * b).collect(),
            );
        }
        Op::Sum(a) => {
            let n = nodes[a.0].value.len();
            accumulate(grads, nodes, *a, vec![g[0]; n]);
        }
        Op::Mean(a) => {
            let n = nodes[a.0].value.len();
            accumulate(grads, nodes, *a, vec![g[0] / n as f64; n]);
        }
        Op::SumAxis { input, axis } => {
            let shape = nodes[input.0].value.shape();
            let (outer, n, inner) = axis_extents(shape, *axis);
            let mut dx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for j in 0..n {
                    let dst = (o * n + j) * inner;
                    dx[dst..dst + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            accumulate(grads, nodes, *input, dx);
        }
        Op::Reshape(a) => {
            accumulate(grads, nodes, *a, g.to_vec());
        }
        Op::Permute { input, perm } => {
            let in_shape = nodes[input.0].value.shape();
            let (starts, run) = permute_runs(in_shape, perm);
            let mut dx = vec![0.0; g.len()];
            for (chunk, &start) in g.chunks_exact(run).zip(&starts) {
                dx[start..start + run].copy_from_slice(chunk);
            }
            accumulate(grads, nodes, *input, dx);
        }
        Op::Conv1d {
            input,
            weight,
            kernel,
            stride,
        } => {
            let xv = &nodes[input.0].value;
            let wv = &nodes[weight.0].value;
            let (b, t_in, c_in) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
            let t_out = out.shape()[1];
            let c_out = out.shape()[2];
            let rows = b * t_out;
            let width = kernel * c_in;
            if nodes[weight.0].requires_grad {
                let cols = im2col(xv.data(), b, t_in, c_in, t_out, *kernel, *stride);
                let mut dw = vec![0.0; wv.len()];
                gemm(
                    width,
                    rows,
                    c_out,
                    1.0,
                    &cols,
                    Strides::transposed(width),
                    g,
                    Strides::row_major(c_out),
                    0.0,
                    &mut dw,
                    Strides::row_major(c_out),
                );
                accumulate(grads, nodes, *weight, dw);
            }
            if nodes[input.0].requires_grad {
                let mut dcols = vec![0.0; rows * width];
                gemm(
                    rows,
                    c_out,
                    width,
                    1.0,
                    g,
                    Strides::row_major(c_out),
                    wv.data(),
                    Strides::transposed(c_out),
                    0.0,
                    &mut dcols,
                    Strides::row_major(width),
                );
                let mut dx = vec![0.0; xv.len()];
                for bi in 0..b {
                    for o in 0..t_out {
                        let src = (bi * t_out + o) * width;
                        let dst = (bi * t_in + o * stride) * c_in;
                        dx[dst..dst + width]
                            .iter_mut()
                            .zip(&dcols[src..src + width])
                            .for_each(|(d, x)| *d += x);
                    }
                }
                accumulate(grads, nodes, *input, dx);
            }
        }
    }
}

/// For each flat output index of a permutation, the flat input index it reads.
pub(crate) fn permute_index_map(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let nd = in_shape.len();
    let mut in_strides = vec![1usize; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let stride_of_out: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = in_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for d in (0..nd).rev() {
            idx[d] += 1;
            offset += stride_of_out[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= stride_of_out[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    map
}

/// Permutation as contiguous copies: the input start of each output run, and the run length.
pub(crate) fn permute_runs(in_shape: &[usize], perm: &[usize]) -> (Vec<usize>, usize) {
    let nd = in_shape.len();
    if nd == 0 || perm[nd - 1] != nd - 1 || in_shape[nd - 1] == 0 {
        return (permute_index_map(in_shape, perm), 1);
    }
    let run = in_shape[nd - 1];
    let mut starts = permute_index_map(&in_shape[..nd - 1], &perm[..nd - 1]);
    starts.iter_mut().for_each(|s| *s *= run);
    (starts, run)
}

/// Rows are (batch, output step); each row concatenates `kernel` consecutive input steps.
pub(crate) fn im2col(
    x: &[f64],
    b: usize,
    t_in: usize,
    c_in: usize,
    t_out: usize,
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    let width = kernel * c_in;
    let mut cols = vec![0.0; b * t_out * width];
    for bi in 0..b {
        for o in 0..t_out {
            let src = (bi * t_in + o * stride) * c_in;
            let dst = (bi * t_out + o) * width;
            cols[dst..dst + width].copy_from_slice(&x[src..src + width]);
        }
    }
    cols
}
