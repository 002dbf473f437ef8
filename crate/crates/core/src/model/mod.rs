//! Bidirectional transformer encoder with token + position + segment
//! embeddings and a tied MLM head, with hand-written backpropagation.
//!
//! Each layer is post-norm: self-attention (padding keys masked with −∞),
//! residual, layer norm, GELU feed-forward, residual, layer norm. Dropout
//! follows the attention probabilities and each sub-layer output, and is
//! only active in [`Mode::Train`].

mod backward;
mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for_vocab,
    save_checkpoint, FORMAT_VERSION, MAGIC,
};
pub use config::ModelConfig;
pub use forward::{log_softmax, ForwardOutput, Mode, Sequence};
pub use params::{init_params, LayerParams, ModelParams, TensorKind};
