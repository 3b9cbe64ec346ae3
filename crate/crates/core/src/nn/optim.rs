use alloc::string::ToString;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::{NnError, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWConfig {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers, one pair per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .iter()
            .map(|(_, p)| alloc::vec![0.0; p.value.len()])
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self, id: ParamId) -> &[f64] {
        &self.m[id.index()]
    }

    pub fn second_moment(&self, id: ParamId) -> &[f64] {
        &self.v[id.index()]
    }
}

/// One AdamW update with learning rate `lr` applied to every trainable
/// parameter in `ids`, in the given order. Decay is decoupled:
/// `p -= lr * (wd * p + m_hat / (sqrt(v_hat) + eps))`.
pub fn adamw_step(
    store: &mut ParamStore,
    ids: &[ParamId],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<(), NnError> {
    if !(lr >= 0.0) || !(state.config.weight_decay >= 0.0) {
        return Err(NnError::InvalidHyperparameter("lr and weight decay must be >= 0"));
    }
    for &id in ids {
        if store.get(id).trainable && store.grad(id).iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient {
                id: id.index(),
                name: store.get(id).name.to_string(),
            });
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(c.beta1, t);
    let bc2 = 1.0 - libm::pow(c.beta2, t);
    for &id in ids {
        let p = store.get_mut(id);
        if !p.trainable {
            continue;
        }
        let (m, v) = (&mut state.m[id.index()], &mut state.v[id.index()]);
        let grad = p.grad.data().to_vec();
        for (((w, g), mi), vi) in p.value.data_mut().iter_mut().zip(&grad).zip(m).zip(v) {
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
            let update = (*mi / bc1) / (libm::sqrt(*vi / bc2) + c.eps);
            *w -= lr * (c.weight_decay * *w + update);
        }
    }
    Ok(())
}

/// Cosine decay from `initial_lr` at step 0 to zero at `total_steps`.
pub fn lr_schedule(step: u64, total_steps: u64, initial_lr: f64) -> f64 {
    let total = total_steps.max(1);
    let s = step.min(total) as f64;
    0.5 * initial_lr * (1.0 + libm::cos(PI * s / total as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use alloc::vec;

    fn one_param(v: f64, g: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::new(&[1], vec![v]).unwrap()).unwrap();
        s.grad_mut(id)[0] = g;
        (s, id)
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let (mut s, id) = one_param(0.37, 0.0);
        let mut st = OptimizerState::new(&s, AdamWConfig::new(0.0));
        adamw_step(&mut s, &[id], &mut st, 0.1).unwrap();
        assert_eq!(s.value(id)[0].to_bits(), 0.37f64.to_bits());
        assert_eq!(st.step, 1);
    }

    #[test]
    fn decoupled_decay_hand_value() {
        let (mut s, id) = one_param(1.0, 0.0);
        let mut st = OptimizerState::new(&s, AdamWConfig::new(0.005));
        adamw_step(&mut s, &[id], &mut st, 0.1).unwrap();
        assert!((s.value(id)[0] - 0.9995).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameter_is_bit_identical() {
        let (mut s, id) = one_param(-2.5, 123.0);
        s.set_trainable(id, false);
        let mut st = OptimizerState::new(&s, AdamWConfig::new(0.01));
        for _ in 0..10 {
            adamw_step(&mut s, &[id], &mut st, 0.5).unwrap();
        }
        assert_eq!(s.value(id)[0].to_bits(), (-2.5f64).to_bits());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut s, id) = one_param(1.0, f64::NAN);
        let mut st = OptimizerState::new(&s, AdamWConfig::new(0.0));
        let err = adamw_step(&mut s, &[id], &mut st, 0.1).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient { id: 0, ref name } if name == "p"));
    }

    #[test]
    fn step_is_bit_deterministic() {
        let run = || {
            let (mut s, id) = one_param(0.8, 0.3);
            let mut st = OptimizerState::new(&s, AdamWConfig::new(0.005));
            for _ in 0..5 {
                adamw_step(&mut s, &[id], &mut st, 1e-2).unwrap();
            }
            s.value(id)[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_schedule(0, 54, 1.4e-7), 1.4e-7);
        assert!(lr_schedule(54, 54, 1.4e-7).abs() < 1e-22);
        assert!((lr_schedule(27, 54, 1.0) - 0.5).abs() < 1e-15);
    }
}
