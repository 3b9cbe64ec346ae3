//! Minimal differentiable core: tensors, a parameter store, layers with
//! hand-written backward passes, cross-entropy, AdamW with a cosine schedule,
//! and a finite-difference gradient checker.

mod attention;
pub mod gradcheck;
mod layers;
mod loss;
mod optim;
mod param;
mod tensor;

use alloc::string::String;

pub use attention::{
    attention_block_apply, AttentionCache, BlockCache, MultiHeadAttention, TransformerBlock,
};
pub use layers::{
    dense_apply, gelu, gelu_grad, mean_pool, mean_pool_backward, Dense, FeedForward,
    FeedForwardCache, LayerNorm, LayerNormCache, LAYER_NORM_EPS,
};
pub use loss::{cross_entropy, cross_entropy_loss, softmax, softmax_in_place, CrossEntropy};
pub use optim::{adamw_step, lr_schedule, AdamWConfig, OptimizerState};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(&'static str),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("unknown or mismatched parameter `{0}`")]
    UnknownParameter(String),
    #[error("non-finite gradient in parameter `{name}` (id {id})")]
    NonFiniteGradient { id: usize, name: String },
    #[error("label {label} at row {row} is outside 0..{classes}")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(&'static str),
}
