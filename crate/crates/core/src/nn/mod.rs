//! Neural building blocks: embeddings, multi-head self-attention, post-norm
//! encoder blocks, the convolutional trunk and the small output heads.
//!
//! Every block owns only `ParamId`s; values live in a `ParamStore` and a forward
//! pass records onto a caller-supplied `Graph`.

mod encoder;
mod layers;

pub use encoder::{
    batch_one_hot, Attention, Embedding, Encoder, EncoderBlock, EncoderConfig, FeedForward,
};
pub use layers::{
    conv_out_len, flatten, ConvLayer, ConvStack, LayerNorm, Linear, MlpHead, OutputNet,
    CONV_KERNEL, CONV_STRIDE, MLP_HIDDEN, TRUNK_FILTERS,
};
