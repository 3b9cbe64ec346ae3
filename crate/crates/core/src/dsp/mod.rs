//! Deterministic signal processing: resampling, STFT, mel filterbank,
//! log-mel spectrograms and the baseline input adapters.

mod adapters;
mod fft;
mod mel;
mod resample;

pub use adapters::{
    bilinear_upscale, collapse_rgb_weights, downsample_epoch_to_3000, replicate_to_rgb,
    BASELINE_RATE_HZ,
};
pub use mel::{
    hann, hz_to_mel, log_mel_spectrogram, mel_filterbank, mel_to_hz, LogMelExtractor, MelConfig,
    MelFilterbank, MelSpectrogram,
};
pub use resample::{resample, Resampler, KAISER_BETA, TAPS_PER_PHASE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DspError {
    #[error("invalid sample rates {src} Hz -> {dst} Hz")]
    InvalidRate { src: u32, dst: u32 },
    #[error("empty signal")]
    EmptySignal,
    #[error("invalid mel configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("signal of {samples} samples is shorter than one {window}-sample window")]
    SignalTooShort { samples: usize, window: usize },
    #[error("expected 1 or 2 channels, got {0}")]
    ChannelCount(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("target {target:?} is smaller than input {input:?}")]
    TargetTooSmall {
        input: (usize, usize),
        target: (usize, usize),
    },
    #[error("expected a 30 s epoch of {expected} samples, found {found}")]
    EpochLength { expected: usize, found: usize },
}
