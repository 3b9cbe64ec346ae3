use alloc::vec::Vec;

use super::NnError;

/// Max-subtracted softmax over one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy {
    /// Mean negative log-likelihood over the batch.
    pub loss: f64,
    /// d loss / d logits, same layout as the logits.
    pub grad: Vec<f64>,
}

/// Mean cross-entropy of row-major `logits[n, classes]` against `labels`.
pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> Result<CrossEntropy, NnError> {
    let n = labels.len();
    if classes == 0 || logits.len() != n * classes || n == 0 {
        return Err(NnError::Shape("logits must be labels.len() x classes"));
    }
    let mut grad = Vec::with_capacity(logits.len());
    let mut loss = 0.0;
    for (row, (z, &y)) in logits.chunks_exact(classes).zip(labels).enumerate() {
        if y >= classes {
            return Err(NnError::LabelOutOfRange {
                row,
                label: y,
                classes,
            });
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(z.iter().map(|v| libm::exp(v - max)).sum::<f64>());
        loss += lse - z[y];
        for (c, &v) in z.iter().enumerate() {
            let p = libm::exp(v - lse);
            grad.push((p - if c == y { 1.0 } else { 0.0 }) / n as f64);
        }
    }
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("cross-entropy loss"));
    }
    Ok(CrossEntropy { loss, grad })
}

/// Five-class form used by the stage classifier.
pub fn cross_entropy_loss(logits: &[f64], labels: &[usize]) -> Result<CrossEntropy, NnError> {
    cross_entropy(logits, labels, crate::stage::STAGE_COUNT)
}
