//! Adam with decoupled weight decay.

use crate::params::{tensor_specs, ModelParams};
use crate::tensor::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub step: u64,
    pub first: ModelParams<T>,
    pub second: ModelParams<T>,
}

impl<T: Real> Moments<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Moments {
            step: 0,
            first: ModelParams::zeros(params.dims),
            second: ModelParams::zeros(params.dims),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    /// Effective rate for this step, already multiplied by the decay schedule.
    pub lr: f64,
    pub weight_decay: f64,
    /// Skip every tensor that is not part of the final layer.
    pub final_layer_only: bool,
}

impl AdamW {
    /// `base · γ^epoch`.
    pub fn scheduled_lr(base: f64, gamma: f64, epoch: usize) -> f64 {
        base * gamma.powi(epoch as i32)
    }

    /// ```text
    /// θ ← θ (1 - lr λ)
    /// m ← β1 m + (1 - β1) g;  v ← β2 v + (1 - β2) g²
    /// θ ← θ - lr m̂ / (√v̂ + ε)
    /// ```
    pub fn step<T: Real>(&self, params: &mut ModelParams<T>, grads: &ModelParams<T>, moments: &mut Moments<T>) {
        moments.step += 1;
        let t = moments.step as i32;
        let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let lr = T::lit(self.lr);
        let decay = T::one() - lr * T::lit(self.weight_decay);
        let eps = T::lit(EPSILON);
        let specs = tensor_specs(&params.dims);
        let iter = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(moments.first.tensors_mut())
            .zip(moments.second.tensors_mut())
            .zip(&specs);
        for ((((p, g), m), v), spec) in iter {
            if self.final_layer_only && !spec.final_layer {
                continue;
            }
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
