//! Central finite differences over a parameter store.
//!
//! Only evaluates the loss forward; it never touches the tape's adjoints.

use super::{ParamId, ParamStore, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Numerical gradient of `loss` with respect to every entry of `id`.
pub fn numeric_gradient(
    store: &ParamStore,
    id: ParamId,
    step: f64,
    loss: impl Fn(&ParamStore) -> f64,
) -> Tensor {
    let base = store.get(id).clone();
    let mut work = store.clone();
    let mut out = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        let mut plus = base.to_vec();
        plus[k] += step;
        work.set(id, Tensor::from_parts(base.shape().to_vec(), plus))
            .expect("same shape");
        let lp = loss(&work);
        let mut minus = base.to_vec();
        minus[k] -= step;
        work.set(id, Tensor::from_parts(base.shape().to_vec(), minus))
            .expect("same shape");
        let lm = loss(&work);
        out.push((lp - lm) / (2.0 * step));
    }
    Tensor::from_parts(base.shape().to_vec(), out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    diff / analytic.norm().max(numeric.norm()).max(floor)
}
