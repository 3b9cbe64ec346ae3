use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{accuracy, macro_f1, ConfusionMatrix};
use super::report::EvalReport;
use super::{ExperimentError, Hyperparameters, Sample};
use crate::fusion::{FusionModel, TrainingRegime};
use crate::nn::{adamw_step, cross_entropy_loss, lr_schedule, AdamWConfig, OptimizerState};
use crate::stage::STAGE_COUNT;

/// `ceil(n / batch) * epochs`; the final partial batch counts as a step.
pub fn total_steps(n: usize, batch: usize, epochs: usize) -> u64 {
    (n.div_ceil(batch.max(1)) * epochs) as u64
}

fn check_model(model: &FusionModel, hp: &Hyperparameters) -> Result<(), ExperimentError> {
    if model.mode != hp.mode {
        return Err(ExperimentError::ModelMismatch {
            model: model.mode.name(),
            wanted: hp.mode.name(),
        });
    }
    if model.regime != hp.regime {
        return Err(ExperimentError::ModelMismatch {
            model: model.regime.name(),
            wanted: hp.regime.name(),
        });
    }
    Ok(())
}

/// Mini-batch AdamW with a cosine schedule. Samples are first put in
/// (patient, epoch) order and then shuffled once per pass from `hp.seed`, so
/// the input order of `train` has no effect. Returns the per-step loss.
pub fn train_fold(model: &mut FusionModel, train: &[&Sample], hp: &Hyperparameters) -> Result<Vec<f64>, ExperimentError> {
    hp.validate()?;
    check_model(model, hp)?;
    if train.is_empty() {
        return Err(ExperimentError::EmptyTrainSet);
    }
    let mut ordered: Vec<&Sample> = train.to_vec();
    ordered.sort_by(|a, b| a.key().cmp(&b.key()));
    let labels: Vec<usize> = ordered.iter().map(|s| s.label.code()).collect();

    // Frozen encoders give fixed head inputs; compute them once.
    let probe = model.regime == TrainingRegime::LinearProbe;
    let head_inputs: Vec<Vec<f64>> = if probe {
        ordered.iter().map(|s| model.head_input(&s.input())).collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };

    let trainable = model.trainable_parameters();
    let mut state = OptimizerState::new(&model.store, AdamWConfig::new(hp.weight_decay));
    let total = total_steps(ordered.len(), hp.batch_size, hp.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..ordered.len()).collect();
    let mut history = Vec::with_capacity(total as usize);
    let mut step = 0u64;

    for _ in 0..hp.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            model.store.zero_grad();
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let loss = if probe {
                let x: Vec<f64> = batch.iter().flat_map(|&i| head_inputs[i].iter().copied()).collect();
                let logits = model.head.forward(&model.store, &x, batch.len());
                let ce = cross_entropy_loss(&logits, &batch_labels)?;
                model.head.backward(&mut model.store, &x, batch.len(), &ce.grad, false);
                ce.loss
            } else {
                let mut logits = Vec::with_capacity(batch.len() * STAGE_COUNT);
                let mut caches = Vec::with_capacity(batch.len());
                for &i in batch {
                    let (l, c) = model.forward_train(&ordered[i].input())?;
                    logits.extend_from_slice(&l);
                    caches.push(c);
                }
                let ce = cross_entropy_loss(&logits, &batch_labels)?;
                for (cache, g) in caches.iter().zip(ce.grad.chunks_exact(STAGE_COUNT)) {
                    model.backward_sample(cache, g);
                }
                ce.loss
            };
            if !loss.is_finite() {
                return Err(ExperimentError::NonFiniteLoss { step });
            }
            history.push(loss);
            adamw_step(&mut model.store, &trainable, &mut state, lr_schedule(step, total, hp.initial_lr))?;
            step += 1;
        }
    }
    Ok(history)
}

/// One prediction per test epoch.
pub fn evaluate(model: &FusionModel, test: &[&Sample]) -> Result<EvalReport, ExperimentError> {
    if test.is_empty() {
        return Err(ExperimentError::EmptyTestSet);
    }
    let mut confusion = ConfusionMatrix::new();
    for s in test {
        confusion.record(s.label, model.classify(&s.input())?.predicted);
    }
    Ok(EvalReport {
        accuracy: accuracy(&confusion),
        macro_f1: macro_f1(&confusion),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionMode;
    use crate::stage::SleepStage;
    use alloc::format;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Embedding-only samples where the class sets the mean of a few dims.
    fn separable(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = SleepStage::ALL[i % STAGE_COUNT];
                let emb = |rng: &mut ChaCha8Rng, shift: usize| -> Vec<f64> {
                    (0..6)
                        .map(|d| {
                            let mean = if d == (label.code() + shift) % 6 { 3.0 } else { 0.0 };
                            mean + 0.3 * rng.sample::<f64, _>(StandardNormal)
                        })
                        .collect()
                };
                Sample {
                    patient_id: format!("P{:03}", i % 4),
                    epoch_index: i as u32,
                    label,
                    audio: None,
                    video: None,
                    eog_embedding: Some(emb(&mut rng, 0)),
                    psm_embedding: Some(emb(&mut rng, 1)),
                }
            })
            .collect()
    }

    fn probe_hp(lr: f64) -> Hyperparameters {
        Hyperparameters {
            initial_lr: lr,
            regime: TrainingRegime::LinearProbe,
            ..Hyperparameters::default()
        }
    }

    fn model() -> FusionModel {
        FusionModel::external(FusionMode::Fused, TrainingRegime::LinearProbe, 6, 6, 7).unwrap()
    }

    #[test]
    fn step_count_keeps_partial_batches() {
        assert_eq!(total_steps(100, 12, 6), 54);
        assert_eq!(total_steps(12, 12, 1), 1);
        assert_eq!(total_steps(13, 12, 1), 2);
        let data = separable(100, 1);
        let refs: Vec<&Sample> = data.iter().collect();
        let history = train_fold(&mut model(), &refs, &probe_hp(1e-3)).unwrap();
        assert_eq!(history.len(), 54);
    }

    #[test]
    fn zero_learning_rate_is_bit_identical() {
        let data = separable(30, 2);
        let refs: Vec<&Sample> = data.iter().collect();
        let mut m = model();
        let before = m.clone();
        train_fold(&mut m, &refs, &probe_hp(0.0)).unwrap();
        let ids: Vec<_> = m.store.ids().collect();
        assert_eq!(m.store.checksum(&ids), before.store.checksum(&ids));
    }

    #[test]
    fn loss_falls_and_accuracy_rises_on_separable_data() {
        let data = separable(200, 3);
        let refs: Vec<&Sample> = data.iter().collect();
        let mut m = model();
        let history = train_fold(&mut m, &refs, &probe_hp(0.05)).unwrap();
        let head: f64 = history[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = history[history.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(tail < 0.5 * head, "{head} -> {tail}");
        let test = separable(100, 4);
        let refs: Vec<&Sample> = test.iter().collect();
        assert!(evaluate(&m, &refs).unwrap().accuracy > 0.95);
    }

    #[test]
    fn input_order_does_not_matter() {
        let data = separable(40, 5);
        let mut fwd: Vec<&Sample> = data.iter().collect();
        let hp = probe_hp(0.01);
        let mut a = model();
        let la = train_fold(&mut a, &fwd, &hp).unwrap();
        fwd.reverse();
        let mut b = model();
        let lb = train_fold(&mut b, &fwd, &hp).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
    }

    #[test]
    fn contract_errors() {
        let data = separable(10, 6);
        let refs: Vec<&Sample> = data.iter().collect();
        assert!(matches!(train_fold(&mut model(), &[], &probe_hp(0.1)), Err(ExperimentError::EmptyTrainSet)));
        let hp = Hyperparameters {
            mode: FusionMode::EogOnly,
            ..probe_hp(0.1)
        };
        assert!(matches!(train_fold(&mut model(), &refs, &hp), Err(ExperimentError::ModelMismatch { .. })));
        assert!(matches!(evaluate(&model(), &[]), Err(ExperimentError::EmptyTestSet)));
        let huge = probe_hp(f64::MAX);
        let mut m = model();
        assert!(matches!(
            train_fold(&mut m, &refs, &huge),
            Err(ExperimentError::NonFiniteLoss { .. }) | Err(ExperimentError::Nn(_))
        ));
    }
}
