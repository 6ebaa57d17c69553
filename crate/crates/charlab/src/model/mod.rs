//! The decoder-only transformer and its character-aware extension.
//!
//! The base model is a pre-norm causal decoder (learned absolute positions,
//! GELU MLP with 4x expansion, untied input/output embeddings). When
//! `char_enabled` is set, a small block-causal character encoder runs over
//! the flattened character stream of the token sequence, and selected decoder
//! layers gain a residual cross-attention sub-block (token queries, character
//! keys/values) between self-attention and the MLP.
//!
//! All math is f64. Forward, backward, and generation are hand-written; the
//! gradient path is validated against central differences in the tests.

mod backward;
mod config;
mod forward;
mod generate;
mod params;
mod stream;

pub use backward::{loss_and_grads, sequence_loss, GradSet, LossMask, TrainExample};
pub use config::{Insertion, ModelConfig, Parametrization};
pub use forward::{encode_chars, forward, logits_finite, residual_sumsq};
pub use generate::{generate, GenOutcome, IncrementalState};
pub use params::{
    load_checkpoint, param_count, save_checkpoint, tensor_specs, Checkpoint, ParamCount,
    Parameters, Tensor, TensorRole, TensorSpec,
};
pub use stream::{build_char_stream, cross_attn_mask, self_attn_mask, CharStream};

use crate::vocab::VocabError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds max_tokens={max}")]
    Overlong { len: usize, max: usize },
    #[error("character stream of {len} exceeds max_chars={max}")]
    TooManyChars { len: usize, max: usize },
    #[error("word of {len} characters exceeds max_intra={max}")]
    WordTooLong { len: usize, max: usize },
    #[error("character stream covers {got} tokens, expected {expect}")]
    StreamMismatch { expect: usize, got: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("batch contains an example with no predicted positions")]
    ZeroPredictedPositions,
    #[error("prompt does not fit the model context")]
    PromptTooLong,
    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
