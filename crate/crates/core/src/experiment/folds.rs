use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExperimentError;

/// Patient-level assignment of every patient to exactly one test fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Test patients of each fold.
    pub folds: Vec<Vec<String>>,
}

/// Sorts the ids, shuffles them with `seed` and deals them round-robin into
/// `k` folds. The input order does not matter.
pub fn plan_folds(patient_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan, ExperimentError> {
    if k == 0 || k > patient_ids.len() {
        return Err(ExperimentError::FoldCount {
            k,
            patients: patient_ids.len(),
        });
    }
    let unique: BTreeSet<&String> = patient_ids.iter().collect();
    if unique.len() != patient_ids.len() {
        let mut seen = BTreeSet::new();
        let dup = patient_ids.iter().find(|p| !seen.insert(*p)).cloned().unwrap_or_default();
        return Err(ExperimentError::DuplicatePatient(dup));
    }
    let mut ids: Vec<String> = unique.into_iter().cloned().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = alloc::vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(FoldPlan { k, seed, folds })
}

impl FoldPlan {
    pub fn test_patients(&self, fold: usize) -> &[String] {
        &self.folds[fold]
    }

    /// Patients of every other fold.
    pub fn train_patients(&self, fold: usize) -> Vec<&String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter())
            .collect()
    }

    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|p| p == patient_id))
    }

    /// Disjoint folds whose union is exactly `patient_ids`.
    pub fn check_cover(&self, patient_ids: &[String]) -> Result<(), ExperimentError> {
        let mut seen = BTreeSet::new();
        for (fold, ids) in self.folds.iter().enumerate() {
            for id in ids {
                if !seen.insert(id.as_str()) {
                    return Err(ExperimentError::Leakage {
                        fold,
                        patient_id: id.clone(),
                    });
                }
            }
        }
        let wanted: BTreeSet<&str> = patient_ids.iter().map(String::as_str).collect();
        if wanted != seen {
            let missing = wanted
                .symmetric_difference(&seen)
                .next()
                .map(|s| String::from(*s))
                .unwrap_or_default();
            return Err(ExperimentError::UnknownPatient(missing));
        }
        Ok(())
    }
}
