use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::store::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Classic L2 coefficient: `weight_decay * param` is added to the
    /// gradient before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Bias-corrected Adam state for every parameter of one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moment(&self) -> &[Tensor<T>] {
        &self.second
    }

    /// Applies one update from the gradients currently held in `store`.
    /// Gradients are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<(), TensorError> {
        if store.len() != self.first.len() {
            return Err(TensorError::InvalidArgument {
                op: "adam_step",
                reason: format!(
                    "optimizer tracks {} parameters, store has {}",
                    self.first.len(),
                    store.len()
                ),
            });
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.epsilon);
        let wd = T::lit(c.weight_decay);
        let t = self.step as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for (k, p) in store.params_mut().iter_mut().enumerate() {
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            let grad = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i] + wd * *w;
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    fn scalar_store(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(x)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = scalar_store(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step(&mut s).unwrap();
        assert_eq!(s.value(s.id("x").unwrap()).item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(0.0);
        let id = s.id("x").unwrap();
        s.accumulate_grad(id, &Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step(&mut s).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = -lr / (1 + ε).
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((s.value(id).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_is_added_to_gradient() {
        let mut s = scalar_store(2.0);
        let id = s.id("x").unwrap();
        let cfg = AdamConfig {
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &s);
        adam.step(&mut s).unwrap();
        // Effective gradient 0.5 * 2 = 1 > 0, so the parameter shrinks by ~lr.
        assert!((s.value(id).item() - (2.0 - 0.001)).abs() < 1e-9);
    }

    #[test]
    fn convex_quadratic_loss_is_monotone_after_warmup() {
        let mut s = ParamStore::new();
        let id = s
            .add("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.01,
                ..AdamConfig::default()
            },
            &s,
        );
        let mut losses = Vec::new();
        for _ in 0..200 {
            s.zero_grads();
            let mut tape = Tape::new();
            let w = tape.param(&s, id);
            let sq = tape.mul(w, w).unwrap();
            let loss = tape.sum(sq);
            losses.push(tape.value(loss).item());
            tape.backward(loss, &mut s).unwrap();
            adam.step(&mut s).unwrap();
        }
        for k in 10..losses.len() - 1 {
            assert!(losses[k + 1] <= losses[k], "step {k}: {} > {}", losses[k + 1], losses[k]);
        }
        assert!(losses[199] < losses[0]);
    }

    #[test]
    fn mismatched_store_is_rejected() {
        let s = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let mut other = scalar_store(1.0);
        other.add("y", Tensor::scalar(0.0)).unwrap();
        assert!(adam.step(&mut other).is_err());
    }
}
