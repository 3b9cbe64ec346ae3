//! Central finite-difference check of analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use super::{NnError, ParamStore};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Gradients smaller than this in both the analytic and numeric form are
/// compared on an absolute scale. Central differences at the default step
/// carry roundoff near 1e-11 for unit-scale losses, which would dominate a
/// relative error on a gradient that is exactly zero.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Largest gradient magnitude, analytic or numeric.
    pub scale: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares the gradients written by `analytic` against central differences
/// of `loss` for every parameter in `store`.
///
/// `analytic` must leave d loss / d param in the store's gradient buffers;
/// it is called once after the gradients are zeroed.
pub fn gradcheck<L, A>(
    store: &mut ParamStore,
    loss: L,
    analytic: A,
    step: f64,
    tolerance: f64,
) -> Result<GradcheckReport, NnError>
where
    L: Fn(&ParamStore) -> f64,
    A: Fn(&mut ParamStore),
{
    store.zero_grad();
    analytic(store);
    let ids: Vec<_> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let analytic_grad = store.grad(id).to_vec();
        if analytic_grad.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFinite("analytic gradient"));
        }
        let mut numeric = Vec::with_capacity(analytic_grad.len());
        for i in 0..analytic_grad.len() {
            let orig = store.value(id)[i];
            store.get_mut(id).value.data_mut()[i] = orig + step;
            let up = loss(store);
            store.get_mut(id).value.data_mut()[i] = orig - step;
            let down = loss(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(NnError::NonFinite("loss under perturbation"));
            }
            numeric.push((up - down) / (2.0 * step));
        }
        let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let diff = analytic_grad
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        let scale = max_abs(&numeric).max(max_abs(&analytic_grad));
        let max_rel_error = diff / scale.max(SCALE_FLOOR);
        params.push(ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_error,
            scale,
            passed: max_rel_error <= tolerance,
        });
    }
    Ok(GradcheckReport { params, tolerance })
}
