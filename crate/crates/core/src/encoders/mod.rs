//! Per-modality encoders. The toy encoders are small trainable transformers
//! over tokenized EOG spectrograms and pressure clips; externally computed
//! embeddings enter through [`ExternalEmbeddingStore`].

mod external;
mod toy;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::NnError;

pub use external::{ExternalEmbeddingStore, Modality};
pub use toy::{
    tokenize_clip, tokenize_spectrogram, AudioEncoder, AudioTokens, EncoderCache, TokenEncoder,
    Tokens, VideoEncoder, VideoTokens,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("spectrogram has {frames} frames, fewer than one {patch}-frame patch")]
    TooFewFrames { frames: usize, patch: usize },
    #[error("pressure clip has {found} values, expected {expected}")]
    ClipShape { expected: usize, found: usize },
    #[error("spectrogram is {found:?} (channels, mels), encoder expects {expected:?}")]
    SpectrogramShape { expected: (usize, usize), found: (usize, usize) },
    #[error("{tokens} tokens exceed the positional table of {max}")]
    TooManyTokens { tokens: usize, max: usize },
    #[error("token width {found} does not match encoder input width {expected}")]
    TokenWidth { expected: usize, found: usize },
    #[error("invalid encoder configuration: {0}")]
    Config(&'static str),
    #[error("embedding dims disagree: {expected} vs {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("duplicate embedding for {patient_id} epoch {epoch_index}")]
    DuplicateKey { patient_id: alloc::string::String, epoch_index: u32 },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    ToyAudio,
    ToyVideo,
    External,
    /// Concatenation of two embeddings.
    Fused,
}

/// Fixed-dimension output of one encoder for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source: EmbeddingSource,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, source: EmbeddingSource) -> Result<Self, EncoderError> {
        if values.is_empty() {
            return Err(EncoderError::Config("embedding must have at least one value"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("embedding value").into());
        }
        Ok(Self { values, source })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub model_dim: usize,
    pub head_count: usize,
    pub block_count: usize,
    pub ff_hidden: usize,
    pub embedding_dim: usize,
    /// Mel frames per audio token.
    pub patch_len: usize,
    /// Consecutive frames averaged inside a patch before projection;
    /// must divide `patch_len`.
    pub time_pool: usize,
    /// Keep every `frame_stride`-th pressure frame.
    pub frame_stride: usize,
    /// Size of the learned positional table.
    pub max_tokens: usize,
    pub use_positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            model_dim: 32,
            head_count: 4,
            block_count: 1,
            ff_hidden: 64,
            embedding_dim: 64,
            patch_len: 100,
            time_pool: 50,
            frame_stride: 10,
            max_tokens: 64,
            use_positional: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |why| Err(EncoderError::Config(why));
        if self.model_dim == 0 || self.head_count == 0 || self.model_dim % self.head_count != 0 {
            return bad("model_dim must be a positive multiple of head_count");
        }
        if self.embedding_dim == 0 || self.ff_hidden == 0 {
            return bad("embedding_dim and ff_hidden must be positive");
        }
        if self.patch_len == 0 || self.time_pool == 0 || self.patch_len % self.time_pool != 0 {
            return bad("time_pool must divide a positive patch_len");
        }
        if self.frame_stride == 0 || self.max_tokens == 0 {
            return bad("frame_stride and max_tokens must be positive");
        }
        Ok(())
    }

    /// Values per audio token for a `channels x n_mels` spectrogram.
    pub fn audio_token_width(&self, channels: usize, n_mels: usize) -> usize {
        channels * n_mels * (self.patch_len / self.time_pool)
    }
}
