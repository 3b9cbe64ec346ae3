use serde::{Deserialize, Serialize};

use crate::stage::{SleepStage, STAGE_COUNT};

/// Rows are the scored stage, columns the predicted stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; STAGE_COUNT]; STAGE_COUNT],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; STAGE_COUNT]; STAGE_COUNT]) -> Self {
        Self { counts }
    }

    pub fn record(&mut self, truth: SleepStage, predicted: SleepStage) {
        self.counts[truth.code() as usize][predicted.code() as usize] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..STAGE_COUNT).map(|i| self.counts[i][i]).sum()
    }

    /// Per-stage support.
    pub fn row_sums(&self) -> [u64; STAGE_COUNT] {
        let mut out = [0; STAGE_COUNT];
        for (o, row) in out.iter_mut().zip(&self.counts) {
            *o = row.iter().sum();
        }
        out
    }

    pub fn col_sums(&self) -> [u64; STAGE_COUNT] {
        let mut out = [0; STAGE_COUNT];
        for row in &self.counts {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Each row scaled to percentages of its support; empty rows stay zero.
    pub fn row_percentages(&self) -> [[f64; STAGE_COUNT]; STAGE_COUNT] {
        let mut out = [[0.0; STAGE_COUNT]; STAGE_COUNT];
        for (o, row) in out.iter_mut().zip(&self.counts) {
            let n: u64 = row.iter().sum();
            if n > 0 {
                for (p, &c) in o.iter_mut().zip(row) {
                    *p = 100.0 * c as f64 / n as f64;
                }
            }
        }
        out
    }
}

/// `trace / total`; zero for an empty matrix.
pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        0.0
    } else {
        cm.trace() as f64 / total as f64
    }
}

/// Per-stage F1 with every undefined ratio taken as 0.
pub fn per_class_f1(cm: &ConfusionMatrix) -> [f64; STAGE_COUNT] {
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let mut out = [0.0; STAGE_COUNT];
    for c in 0..STAGE_COUNT {
        let tp = cm.counts[c][c] as f64;
        let precision = if cols[c] == 0 { 0.0 } else { tp / cols[c] as f64 };
        let recall = if rows[c] == 0 { 0.0 } else { tp / rows[c] as f64 };
        out[c] = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
    }
    out
}

/// Unweighted mean of the five per-stage F1 scores.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    per_class_f1(cm).iter().sum::<f64>() / STAGE_COUNT as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_scores_one() {
        let mut cm = ConfusionMatrix::new();
        for (i, s) in SleepStage::ALL.iter().enumerate() {
            for _ in 0..=i {
                cm.record(*s, *s);
            }
        }
        assert_eq!(accuracy(&cm), 1.0);
        assert_eq!(macro_f1(&cm), 1.0);
    }

    #[test]
    fn single_populated_class_gives_one_fifth() {
        let mut counts = [[0; 5]; 5];
        counts[0][0] = 5;
        let cm = ConfusionMatrix::from_counts(counts);
        assert_eq!(macro_f1(&cm), 0.2);
        assert_eq!(accuracy(&cm), 1.0);
    }

    #[test]
    fn constant_wake_on_balanced_set() {
        let mut cm = ConfusionMatrix::new();
        for s in SleepStage::ALL {
            for _ in 0..4 {
                cm.record(s, SleepStage::Wake);
            }
        }
        assert_eq!(accuracy(&cm), 0.2);
        assert_eq!(cm.row_sums(), [4; 5]);
        assert_eq!(cm.col_sums(), [20, 0, 0, 0, 0]);
        // Wake: P = 0.2, R = 1 -> F1 = 1/3; the rest are 0.
        assert!((macro_f1(&cm) - (1.0 / 3.0) / 5.0).abs() < 1e-15);
    }

    #[test]
    fn row_percentages_skip_empty_rows() {
        let mut counts = [[0; 5]; 5];
        counts[1] = [1, 3, 0, 0, 0];
        let p = ConfusionMatrix::from_counts(counts).row_percentages();
        assert_eq!(p[1][..2], [25.0, 75.0]);
        assert_eq!(p[0], [0.0; 5]);
    }
}
