use rand::Rng;

use crate::numcore::{Graph, NumError, ParamId, ParamStore, Tensor, Var};

/// Glorot-uniform matrix `[fan_in, fan_out]`.
pub(crate) fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::from_vec(vec![fan_in, fan_out], data)
}

/// Affine map over the last axis: `x @ W + b`, weight stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(fan_in, fan_out, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out]));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    /// Accepts any leading shape `[.., in]` and returns `[.., out]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NumError> {
        let shape = g.shape(x).to_vec();
        if shape.last() != Some(&self.fan_in) {
            return Err(NumError::ShapeMismatch {
                op: "linear",
                left: shape,
                right: vec![self.fan_in, self.fan_out],
            });
        }
        let rows = shape[..shape.len() - 1].iter().product();
        let flat = g.reshape(x, vec![rows, self.fan_in])?;
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(flat, w)?;
        let y = g.add(y, b)?;
        let mut out = shape;
        *out.last_mut().unwrap() = self.fan_out;
        g.reshape(y, out)
    }
}

/// Layer normalisation over the last axis with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(vec![width])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![width])),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NumError> {
        let axis = g.shape(x).len().saturating_sub(1);
        let n = g.layer_norm(x, axis)?;
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let y = g.mul(n, gamma)?;
        g.add(y, beta)
    }
}

pub const CONV_KERNEL: usize = 2;
pub const CONV_STRIDE: usize = 2;

/// One `conv1d -> ReLU` stage over channels-last input `[B, T, C_in]`.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = CONV_KERNEL * in_channels;
        let weight = store.add(format!("{name}.weight"), glorot(fan_in, out_channels, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_channels]));
        ConvLayer {
            weight,
            bias,
            in_channels,
            out_channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NumError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.conv1d(x, w, CONV_KERNEL, CONV_STRIDE)?;
        let y = g.add(y, b)?;
        g.relu(y)
    }
}

/// Output length of one stride-2, kernel-2 stage.
pub fn conv_out_len(t: usize) -> usize {
    if t < CONV_KERNEL {
        0
    } else {
        (t - CONV_KERNEL) / CONV_STRIDE + 1
    }
}

/// A chain of conv stages. The single-task trunk uses filters 32/64/128.
#[derive(Clone, Debug)]
pub struct ConvStack {
    pub layers: Vec<ConvLayer>,
}

pub const TRUNK_FILTERS: [usize; 3] = [32, 64, 128];

impl ConvStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        filters: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(filters.len());
        let mut c = in_channels;
        for (i, &f) in filters.iter().enumerate() {
            layers.push(ConvLayer::new(store, &format!("{name}.conv{i}"), c, f, rng));
            c = f;
        }
        ConvStack { layers }
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    /// Temporal length after all stages.
    pub fn out_len(&self, t: usize) -> usize {
        self.layers.iter().fold(t, |t, _| conv_out_len(t))
    }

    /// `[B, T, C]` to `[B, T', C']` without flattening.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NumError> {
        self.layers
            .iter()
            .try_fold(x, |h, l| l.forward(g, store, h))
    }

    /// Runs the stack and flattens to `[B, T' * C']`.
    pub fn features(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NumError> {
        let h = self.forward(g, store, x)?;
        flatten(g, h)
    }
}

/// `[B, ..]` to `[B, prod(..)]`.
pub fn flatten(g: &mut Graph, x: Var) -> Result<Var, NumError> {
    let shape = g.shape(x).to_vec();
    let rest = shape[1..].iter().product();
    g.reshape(x, vec![shape[0], rest])
}

pub const MLP_HIDDEN: usize = 64;

/// `Linear -> ReLU -> dropout -> Linear` to two logits (edited, not edited).
#[derive(Clone, Debug)]
pub struct MlpHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl MlpHead {
    pub fn new(store: &mut ParamStore, name: &str, in_width: usize, rng: &mut impl Rng) -> Self {
        MlpHead {
            hidden: Linear::new(store, &format!("{name}.hidden"), in_width, MLP_HIDDEN, rng),
            out: Linear::new(store, &format!("{name}.out"), MLP_HIDDEN, 2, rng),
        }
    }

    /// Pre-softmax logits `[B, 2]`.
    pub fn logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        features: Var,
        dropout: f64,
    ) -> Result<Var, NumError> {
        let h = self.hidden.forward(g, store, features)?;
        let h = g.relu(h)?;
        let h = g.dropout(h, dropout)?;
        self.out.forward(g, store, h)
    }

    /// Probability pairs `[B, 2]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        features: Var,
        dropout: f64,
    ) -> Result<Var, NumError> {
        let z = self.logits(g, store, features, dropout)?;
        g.softmax(z, 1)
    }
}

/// Per-position map from the concatenated `[z_ref; z_out]` (width `2d`) to two
/// logits, with an optional learned per-position offset.
#[derive(Clone, Debug)]
pub struct OutputNet {
    pub proj: Linear,
    pub position_bias: Option<ParamId>,
}

impl OutputNet {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        t_max: usize,
        position_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let proj = Linear::new(store, &format!("{name}.proj"), in_width, 2, rng);
        let position_bias = position_bias.then(|| {
            store.add(
                format!("{name}.position_bias"),
                Tensor::zeros(vec![t_max, 2]),
            )
        });
        OutputNet {
            proj,
            position_bias,
        }
    }

    /// `[N, T, 2d]` to log-probabilities `[N, T, 2]`.
    pub fn log_probs(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var, NumError> {
        let mut y = self.proj.forward(g, store, z)?;
        if let Some(pb) = self.position_bias {
            let t = g.shape(z)[1];
            let table = g.param(store, pb);
            let rows: Vec<usize> = (0..t).collect();
            let bias = g.embedding_gather(table, &rows)?;
            y = g.add(y, bias)?;
        }
        g.log_softmax(y, 2)
    }
}
