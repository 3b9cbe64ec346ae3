use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use super::metrics::ConfusionMatrix;
use super::{ExperimentError, Hyperparameters};
use crate::fusion::{FusionMode, TrainingRegime};
use crate::stage::SleepStage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub macro_f1: f64,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        Self {
            accuracy: super::accuracy(&confusion),
            macro_f1: super::macro_f1(&confusion),
            confusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_patients: Vec<String>,
    pub train_epochs: usize,
    pub test_epochs: usize,
    pub steps: u64,
    pub final_loss: f64,
    pub eval: EvalReport,
}

/// Fold reports plus their unweighted means. `confusion` is the sum over
/// folds and is only used for display; the headline numbers are the means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub method: String,
    pub mode: FusionMode,
    pub regime: TrainingRegime,
    pub hyperparameters: Hyperparameters,
    pub fold_seed: u64,
    pub fingerprint: String,
    pub folds: Vec<FoldReport>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl CrossValReport {
    pub fn from_folds(
        method: &str,
        hyperparameters: Hyperparameters,
        fold_seed: u64,
        mut folds: Vec<FoldReport>,
    ) -> Result<Self, ExperimentError> {
        if folds.is_empty() {
            return Err(ExperimentError::NoReports);
        }
        folds.sort_by_key(|f| f.fold);
        let n = folds.len() as f64;
        let mut confusion = ConfusionMatrix::new();
        for f in &folds {
            confusion.merge(&f.eval.confusion);
        }
        Ok(Self {
            method: method.into(),
            mode: hyperparameters.mode,
            regime: hyperparameters.regime,
            hyperparameters,
            fold_seed,
            fingerprint: String::new(),
            accuracy: folds.iter().map(|f| f.eval.accuracy).sum::<f64>() / n,
            macro_f1: folds.iter().map(|f| f.eval.macro_f1).sum::<f64>() / n,
            folds,
            confusion,
        })
    }
}

const STAGE_WIDTH: usize = 7;

fn matrix_block<T>(out: &mut String, title: &str, rows: &[[T; 5]; 5], cell: impl Fn(&T) -> String) {
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:<9}", "true\\pred");
    for s in SleepStage::ALL {
        let _ = write!(out, " {:>STAGE_WIDTH$}", s.name());
    }
    out.push('\n');
    for (s, row) in SleepStage::ALL.iter().zip(rows) {
        let _ = write!(out, "{:<9}", s.name());
        for v in row {
            let _ = write!(out, " {:>STAGE_WIDTH$}", cell(v));
        }
        out.push('\n');
    }
}

/// Comparison table with one row per report, then the summed confusion of
/// each report as raw counts and as row percentages.
pub fn render_report(reports: &[CrossValReport]) -> Result<String, ExperimentError> {
    if reports.is_empty() {
        return Err(ExperimentError::NoReports);
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:<9} {:<13} {:>5} {:>8} {:>8}",
        "method", "modality", "regime", "folds", "accuracy", "macro_f1"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<20} {:<9} {:<13} {:>5} {:>8.3} {:>8.3}",
            r.method,
            r.mode.name(),
            r.regime.name(),
            r.folds.len(),
            r.accuracy,
            r.macro_f1
        );
    }
    for r in reports {
        out.push('\n');
        let label = format!("{} / {} / {}", r.method, r.mode.name(), r.regime.name());
        matrix_block(&mut out, &format!("{label}: counts"), &r.confusion.counts, |v| format!("{v}"));
        out.push('\n');
        matrix_block(&mut out, &format!("{label}: row %"), &r.confusion.row_percentages(), |v| {
            format!("{v:.1}")
        });
    }
    Ok(out)
}
