//! Patient-grouped cross-validation: fold planning, the training loop,
//! metrics and report rendering.

mod crossval;
mod data;
mod folds;
mod metrics;
mod report;
mod train;

use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::DspError;
use crate::encoders::EncoderError;
use crate::fusion::{FusionError, FusionMode, TrainingRegime};
use crate::nn::NnError;

pub use crossval::{run_crossval, run_fold, sweep, FoldOutcome, SweepEntry, SweepGrid, SweepResult};
pub use data::{Featurizer, ModelSpec, Sample};
pub use folds::{plan_folds, FoldPlan};
pub use metrics::{accuracy, macro_f1, per_class_f1, ConfusionMatrix};
pub use report::{render_report, CrossValReport, EvalReport, FoldReport};
pub use train::{evaluate, total_steps, train_fold};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot split {patients} patients into {k} folds")]
    FoldCount { k: usize, patients: usize },
    #[error("patient {0} listed twice")]
    DuplicatePatient(String),
    #[error("patient {0} is not covered by the fold plan")]
    UnknownPatient(String),
    #[error("patient {patient_id} appears in train and test of fold {fold}")]
    Leakage { fold: usize, patient_id: String },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(&'static str),
    #[error("model is {model} but hyperparameters ask for {wanted}")]
    ModelMismatch { model: &'static str, wanted: &'static str },
    #[error("no reports to render")]
    NoReports,
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub initial_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub regime: TrainingRegime,
    pub mode: FusionMode,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            initial_lr: 1.4e-7,
            weight_decay: 0.005,
            batch_size: 12,
            epochs: 6,
            seed: 0,
            regime: TrainingRegime::FineTune,
            mode: FusionMode::Fused,
        }
    }
}

impl Hyperparameters {
    /// A zero learning rate is allowed; it leaves every parameter untouched.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.initial_lr.is_finite() && self.initial_lr >= 0.0) {
            return Err(ExperimentError::Hyperparameter("initial_lr must be finite and >= 0"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(ExperimentError::Hyperparameter("weight_decay must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(ExperimentError::Hyperparameter("batch_size must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(ExperimentError::Hyperparameter("epochs must be >= 1"));
        }
        Ok(())
    }
}
