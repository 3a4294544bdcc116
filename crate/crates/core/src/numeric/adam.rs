use serde::{Deserialize, Serialize};

use super::{Gradients, NumericError, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators, one pair per parameter in the store they were built for.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of every parameter in `trainable`.
    ///
    /// Parameters without a gradient are treated as having a zero gradient.
    /// A non-finite gradient aborts the step before anything is modified.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &Gradients,
        trainable: &[ParamId],
    ) -> Result<(), NumericError> {
        for &id in trainable {
            if id.0 >= self.m.len() {
                return Err(NumericError::UnknownParam(format!("#{}", id.0)));
            }
            let p = store.get(id);
            if let Some(g) = grads.param(id) {
                if g.shape() != p.shape() {
                    return Err(NumericError::ShapeMismatch {
                        op: "adam_step",
                        left: p.shape().to_vec(),
                        right: g.shape().to_vec(),
                    });
                }
                if !g.all_finite() {
                    return Err(NumericError::NonFiniteGradient {
                        param: store.name(id).to_string(),
                    });
                }
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for &id in trainable {
            let g = grads.param(id);
            let p = store.get(id);
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let mut out = p.to_vec();
            for k in 0..out.len() {
                let gk = g.map_or(0.0, |g| g.data()[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                out[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
            store.set(id, Tensor::from_parts(p.shape().to_vec(), out))?;
        }
        Ok(())
    }
}
