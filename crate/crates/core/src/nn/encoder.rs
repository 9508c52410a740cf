use rand::Rng;

use super::layers::{glorot, LayerNorm, Linear};
use crate::numcore::{Graph, NumError, ParamId, ParamStore, Tensor, Var};
use crate::seqcore::MAX_SEQ_LEN;

/// Width and depth of one encoder network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Embedding width `d_e`; must equal `d_model`.
    pub d_embed: usize,
    /// Per-head and block width `d`.
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_hidden: usize,
    pub t_max: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_embed: 124,
            d_model: 124,
            heads: 8,
            blocks: 12,
            ffn_hidden: 248,
            t_max: MAX_SEQ_LEN,
        }
    }
}

impl EncoderConfig {
    /// Square config with FFN hidden width `2d`.
    pub fn new(d: usize, heads: usize, blocks: usize) -> Self {
        EncoderConfig {
            d_embed: d,
            d_model: d,
            heads,
            blocks,
            ffn_hidden: 2 * d,
            t_max: MAX_SEQ_LEN,
        }
    }

    pub fn validate(&self) -> Result<(), NumError> {
        let bad = |m: String| Err(NumError::InvalidArgument(m));
        if self.d_embed == 0 || self.d_model == 0 || self.heads == 0 || self.ffn_hidden == 0 {
            return bad(format!(
                "encoder widths and head count must be positive: {self:?}"
            ));
        }
        if self.d_embed != self.d_model {
            return bad(format!(
                "residual around the first block needs d_embed == d_model, got {} and {}",
                self.d_embed, self.d_model
            ));
        }
        if self.t_max < MAX_SEQ_LEN {
            return bad(format!(
                "t_max {} below the longest sequence {MAX_SEQ_LEN}",
                self.t_max
            ));
        }
        Ok(())
    }
}

/// Token table `[4, d_e]` and position table `[t_max, d_e]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub t_max: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_embed: usize,
        t_max: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Embedding {
            tokens: store.add(format!("{name}.tokens"), glorot(4, d_embed, rng)),
            positions: store.add(format!("{name}.positions"), glorot(t_max, d_embed, rng)),
            t_max,
        }
    }

    /// One-hot `[B, T, 4]` to `u = O W_e + P`, shape `[B, T, d_e]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        one_hot: Var,
    ) -> Result<Var, NumError> {
        let shape = g.shape(one_hot).to_vec();
        if shape.len() != 3 || shape[2] != 4 || shape[1] > self.t_max {
            return Err(NumError::ShapeMismatch {
                op: "embed",
                left: shape,
                right: vec![self.t_max, 4],
            });
        }
        let (b, t) = (shape[0], shape[1]);
        let tokens = g.param(store, self.tokens);
        let d = g.shape(tokens)[1];
        let flat = g.reshape(one_hot, vec![b * t, 4])?;
        let e = g.matmul(flat, tokens)?;
        let e = g.reshape(e, vec![b, t, d])?;
        let table = g.param(store, self.positions);
        let rows: Vec<usize> = (0..t).collect();
        let p = g.embedding_gather(table, &rows)?;
        g.add(e, p)
    }
}

/// Multi-head self-attention with per-head width `d`: each head projects
/// `d_in -> d`, heads concatenate to `d * H` and an affine map returns to `d`.
#[derive(Clone, Debug)]
pub struct Attention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub out: Linear,
    pub heads: usize,
    pub head_dim: usize,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let hd = heads * d;
        Attention {
            query: store.add(format!("{name}.query"), glorot(d_in, hd, rng)),
            key: store.add(format!("{name}.key"), glorot(d_in, hd, rng)),
            value: store.add(format!("{name}.value"), glorot(d_in, hd, rng)),
            out: Linear::new(store, &format!("{name}.out"), hd, d, rng),
            heads,
            head_dim: d,
        }
    }

    /// `[B, T, d_in] -> [B*T, d_in] @ W -> [B*H, T, d]`
    fn split_heads(
        &self,
        g: &mut Graph,
        x: Var,
        w: Var,
        b: usize,
        t: usize,
    ) -> Result<Var, NumError> {
        let (h, d) = (self.heads, self.head_dim);
        let y = g.matmul(x, w)?;
        let y = g.reshape(y, vec![b, t, h, d])?;
        let y = g.permute(y, &[0, 2, 1, 3])?;
        g.reshape(y, vec![b * h, t, d])
    }

    /// Attention weights `[B*H, T, T]` and the projected output `[B, T, d]`.
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
    ) -> Result<(Var, Var), NumError> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(NumError::ShapeMismatch {
                op: "self_attention",
                left: shape,
                right: vec![self.head_dim],
            });
        }
        let (b, t, d_in) = (shape[0], shape[1], shape[2]);
        let (h, d) = (self.heads, self.head_dim);
        let flat = g.reshape(x, vec![b * t, d_in])?;
        let wq = g.param(store, self.query);
        let wk = g.param(store, self.key);
        let wv = g.param(store, self.value);
        let q = self.split_heads(g, flat, wq, b, t)?;
        let k = self.split_heads(g, flat, wk, b, t)?;
        let v = self.split_heads(g, flat, wv, b, t)?;
        let scores = g.batch_matmul(q, k, false, true)?;
        let scores = g.scale(scores, 1.0 / (d as f64).sqrt())?;
        let alpha = g.softmax(scores, 2)?;
        let e = g.batch_matmul(alpha, v, false, false)?;
        let e = g.reshape(e, vec![b, h, t, d])?;
        let e = g.permute(e, &[0, 2, 1, 3])?;
        let e = g.reshape(e, vec![b, t, h * d])?;
        let z = self.out.forward(g, store, e)?;
        Ok((alpha, z))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NumError> {
        self.forward_with_weights(g, store, x).map(|(_, z)| z)
    }
}

/// Two-layer position-wise network with ReLU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub hidden: Linear,
    pub out: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        FeedForward {
            hidden: Linear::new(store, &format!("{name}.hidden"), d, hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NumError> {
        let h = self.hidden.forward(g, store, x)?;
        let h = g.relu(h)?;
        self.out.forward(g, store, h)
    }
}

/// Post-norm block: `h = LN(drop(attn(U)) + U)`, `z = LN(drop(ffn(h)) + h)`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attention: Attention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &EncoderConfig,
        d_in: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.d_model;
        EncoderBlock {
            attention: Attention::new(store, &format!("{name}.attn"), d_in, d, cfg.heads, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, cfg.ffn_hidden, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        u: Var,
        dropout: f64,
    ) -> Result<Var, NumError> {
        let a = self.attention.forward(g, store, u)?;
        let a = g.dropout(a, dropout)?;
        let h = g.add(a, u)?;
        let h = self.norm1.forward(g, store, h)?;
        let f = self.ffn.forward(g, store, h)?;
        let f = g.dropout(f, dropout)?;
        let z = g.add(f, h)?;
        self.norm2.forward(g, store, z)
    }
}

/// Embedding followed by `N` stacked blocks.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub embedding: Embedding,
    pub blocks: Vec<EncoderBlock>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, NumError> {
        cfg.validate()?;
        let embedding =
            Embedding::new(store, &format!("{name}.embed"), cfg.d_embed, cfg.t_max, rng);
        let blocks = (0..cfg.blocks)
            .map(|i| {
                let d_in = if i == 0 { cfg.d_embed } else { cfg.d_model };
                EncoderBlock::new(store, &format!("{name}.block{i}"), &cfg, d_in, rng)
            })
            .collect();
        Ok(Encoder {
            config: cfg,
            embedding,
            blocks,
        })
    }

    /// One-hot `[B, T, 4]` to `[B, T, d]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        one_hot: Var,
        dropout: f64,
    ) -> Result<Var, NumError> {
        let u = self.embedding.forward(g, store, one_hot)?;
        self.blocks
            .iter()
            .try_fold(u, |z, b| b.forward(g, store, z, dropout))
    }
}

/// Stack one-hot encodings of equal-length sequences into `[B, T, 4]`.
pub fn batch_one_hot(seqs: &[&[crate::seqcore::Nucleotide]]) -> Result<Tensor, NumError> {
    let t = seqs.first().map_or(0, |s| s.len());
    let mut data = vec![0.0; seqs.len() * t * 4];
    for (i, s) in seqs.iter().enumerate() {
        if s.len() != t {
            return Err(NumError::ShapeMismatch {
                op: "batch_one_hot",
                left: vec![t],
                right: vec![s.len()],
            });
        }
        for (j, n) in s.iter().enumerate() {
            data[(i * t + j) * 4 + n.index()] = 1.0;
        }
    }
    Tensor::new(vec![seqs.len(), t, 4], data)
}
