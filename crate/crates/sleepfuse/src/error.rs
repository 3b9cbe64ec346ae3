use std::path::{Path, PathBuf};

use sleepfuse_core::dsp::DspError;
use sleepfuse_core::encoders::EncoderError;
use sleepfuse_core::experiment::ExperimentError;
use sleepfuse_core::fusion::FusionError;
use sleepfuse_core::ingest::IngestError;
use sleepfuse_core::nn::NnError;
use sleepfuse_core::synth::SynthError;
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::exchange::ExchangeError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("patient {patient_id}: {source}")]
    Patient {
        patient_id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Exchange {
        path: PathBuf,
        #[source]
        source: ExchangeError,
    },
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, line: usize, reason: impl Into<String>) -> Error {
        Error::Parse {
            path: path.to_path_buf(),
            line,
            reason: reason.into(),
        }
    }

    pub fn for_patient(self, patient_id: &str) -> Error {
        Error::Patient {
            patient_id: patient_id.into(),
            source: Box::new(self),
        }
    }

    /// 1 usage or configuration, 2 data, 3 invariant.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Toml { .. } => 1,
            Error::Invariant(_) => 3,
            Error::Experiment(e) => match e {
                ExperimentError::Leakage { .. } => 3,
                ExperimentError::Hyperparameter(_)
                | ExperimentError::ModelMismatch { .. }
                | ExperimentError::FoldCount { .. } => 1,
                _ => 2,
            },
            Error::Fusion(FusionError::Config(_)) | Error::Encoder(EncoderError::Config(_)) => 1,
            Error::Patient { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
