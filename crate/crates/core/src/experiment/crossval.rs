use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::report::{CrossValReport, FoldReport};
use super::train::{evaluate, total_steps, train_fold};
use super::{ExperimentError, FoldPlan, Hyperparameters, ModelSpec, Sample};
use crate::fusion::FusionModel;
use crate::synth::patient_seed;

pub struct FoldOutcome {
    pub report: FoldReport,
    pub model: FusionModel,
    pub loss_history: Vec<f64>,
}

fn patients_of(samples: &[Sample]) -> Vec<String> {
    let set: BTreeSet<&str> = samples.iter().map(|s| s.patient_id.as_str()).collect();
    set.into_iter().map(String::from).collect()
}

/// Trains a fresh model on every fold but `fold` and evaluates it on `fold`.
/// Model initialisation and batch order are seeded from `hp.seed` and the
/// fold index only.
pub fn run_fold(
    samples: &[Sample],
    spec: &ModelSpec,
    hp: &Hyperparameters,
    plan: &FoldPlan,
    fold: usize,
) -> Result<FoldOutcome, ExperimentError> {
    hp.validate()?;
    if fold >= plan.k {
        return Err(ExperimentError::FoldCount {
            k: fold,
            patients: plan.k,
        });
    }
    plan.check_cover(&patients_of(samples))?;
    let test_ids: BTreeSet<&str> = plan.test_patients(fold).iter().map(String::as_str).collect();
    let (test, train): (Vec<&Sample>, Vec<&Sample>) =
        samples.iter().partition(|s| test_ids.contains(s.patient_id.as_str()));
    let train_ids: BTreeSet<&str> = train.iter().map(|s| s.patient_id.as_str()).collect();
    if let Some(p) = train_ids.intersection(&test_ids).next() {
        return Err(ExperimentError::Leakage {
            fold,
            patient_id: String::from(*p),
        });
    }

    let seed = patient_seed(hp.seed, fold as u64);
    let fold_hp = Hyperparameters { seed, ..*hp };
    let mut model = spec.build(hp.mode, hp.regime, seed)?;
    let loss_history = train_fold(&mut model, &train, &fold_hp)?;
    let eval = evaluate(&model, &test)?;
    Ok(FoldOutcome {
        report: FoldReport {
            fold,
            test_patients: plan.test_patients(fold).to_vec(),
            train_epochs: train.len(),
            test_epochs: test.len(),
            steps: total_steps(train.len(), hp.batch_size, hp.epochs),
            final_loss: loss_history.last().copied().unwrap_or(f64::NAN),
            eval,
        },
        model,
        loss_history,
    })
}

/// All folds in order, then their unweighted average.
pub fn run_crossval(
    samples: &[Sample],
    spec: &ModelSpec,
    hp: &Hyperparameters,
    plan: &FoldPlan,
) -> Result<(CrossValReport, Vec<FusionModel>), ExperimentError> {
    let mut reports = Vec::with_capacity(plan.k);
    let mut models = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let out = run_fold(samples, spec, hp, plan, fold)?;
        reports.push(out.report);
        models.push(out.model);
    }
    Ok((CrossValReport::from_folds(spec.method(), *hp, plan.seed, reports)?, models))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub initial_lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub epochs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub hyperparameters: Hyperparameters,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    /// Index of the highest fold-averaged accuracy; the first wins ties.
    pub best: usize,
}

/// Full cross-validation for every grid point, in lr, wd, epochs order.
pub fn sweep(
    samples: &[Sample],
    spec: &ModelSpec,
    base: &Hyperparameters,
    plan: &FoldPlan,
    grid: &SweepGrid,
) -> Result<SweepResult, ExperimentError> {
    let mut entries = Vec::new();
    for &initial_lr in &grid.initial_lr {
        for &weight_decay in &grid.weight_decay {
            for &epochs in &grid.epochs {
                let hp = Hyperparameters {
                    initial_lr,
                    weight_decay,
                    epochs,
                    ..*base
                };
                let (report, _) = run_crossval(samples, spec, &hp, plan)?;
                entries.push(SweepEntry {
                    hyperparameters: hp,
                    accuracy: report.accuracy,
                    macro_f1: report.macro_f1,
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(ExperimentError::Hyperparameter("empty sweep grid"));
    }
    let mut best = 0;
    for (i, e) in entries.iter().enumerate() {
        if e.accuracy > entries[best].accuracy {
            best = i;
        }
    }
    Ok(SweepResult { entries, best })
}
