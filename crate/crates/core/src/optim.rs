//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Adam hyperparameters. Defaults are the customary β₁ = 0.9, β₂ = 0.999,
/// ε = 1e-8; the training recipe only asks for "default parameters", so
/// these values are an assumption.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    params: Vec<ParamId>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: Vec<ParamId>, store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|&id| Tensor::zeros(store.get(id).shape().to_vec()))
            .collect();
        Self {
            config,
            step: 0,
            params,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn moments(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.first_moment[i], &self.second_moment[i])
    }

    pub(crate) fn set_moments(&mut self, i: usize, m: Tensor, v: Tensor) -> Result<()> {
        if m.shape() != self.first_moment[i].shape() || v.shape() != self.second_moment[i].shape() {
            return Err(Error::Shape {
                op: "adam_state",
                lhs: self.first_moment[i].shape().to_vec(),
                rhs: m.shape().to_vec(),
            });
        }
        self.first_moment[i] = m;
        self.second_moment[i] = v;
        Ok(())
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// One step that increases the objective whose gradient is `grads`.
    pub fn ascend(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        self.update(store, grads, 1.0)
    }

    /// One step that decreases the objective whose gradient is `grads`.
    pub fn descend(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        self.update(store, grads, -1.0)
    }

    fn update(&mut self, store: &mut ParamStore, grads: &Gradients, sign: f64) -> Result<()> {
        for (i, &id) in self.params.iter().enumerate() {
            if store.get(id).shape() != self.first_moment[i].shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: self.first_moment[i].shape().to_vec(),
                    rhs: store.get(id).shape().to_vec(),
                });
            }
            if let Some(g) = grads.param_ref(id) {
                if g.shape() != store.get(id).shape() {
                    return Err(Error::Shape {
                        op: "adam_step",
                        lhs: store.get(id).shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, &id) in self.params.iter().enumerate() {
            // Moments track the gradient of the loss being minimized. Unreached
            // parameters have zero gradient; the moments still decay.
            let grad = grads.param_ref(id);
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                let g = -sign * grad.map_or(0.0, |g| g.data()[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(values: Vec<f64>) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(values));
        (store, id)
    }

    fn grads_for(id: ParamId, g: Vec<f64>) -> Gradients {
        let mut grads = Gradients::default();
        grads.params.insert(id, Tensor::vector(g));
        grads
    }

    #[test]
    fn zero_gradient_is_identity() {
        let (mut store, id) = setup(vec![1.0, -2.0, 3.5]);
        let before = store.get(id).clone();
        let mut adam = Adam::new(vec![id], &store, AdamConfig::default());
        for _ in 0..25 {
            adam.ascend(&mut store, &grads_for(id, vec![0.0; 3]))
                .unwrap();
            adam.ascend(&mut store, &Gradients::default()).unwrap();
        }
        assert_eq!(store.get(id), &before);
        let (m, v) = adam.moments(0);
        assert!(m.data().iter().chain(v.data()).all(|&x| x == 0.0));
        assert_eq!(adam.step, 50);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let (mut store, id) = setup(vec![0.0, 0.0, 0.0]);
        let cfg = AdamConfig {
            learning_rate: 1e-3,
            ..Default::default()
        };
        let mut adam = Adam::new(vec![id], &store, cfg);
        let g = vec![2.5, -0.01, 1e-3];
        adam.ascend(&mut store, &grads_for(id, g.clone())).unwrap();
        for (p, g) in store.get(id).data().iter().zip(&g) {
            // bias-corrected first step: lr·g/(|g| + ε)
            let expected = cfg.learning_rate * g / (g.abs() + cfg.eps);
            assert!((p - expected).abs() < 1e-12, "{p} vs {expected}");
            assert!((p - cfg.learning_rate * g.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn descend_moves_against_gradient() {
        let (mut store, id) = setup(vec![1.0]);
        let mut adam = Adam::new(vec![id], &store, AdamConfig::default());
        adam.descend(&mut store, &grads_for(id, vec![4.0])).unwrap();
        assert!(store.get(id).data()[0] < 1.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (mut store, id) = setup(vec![1.0, 2.0]);
        let mut adam = Adam::new(vec![id], &store, AdamConfig::default());
        assert!(adam.ascend(&mut store, &grads_for(id, vec![1.0])).is_err());
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn adam_training_defaults() {
        let cfg = AdamConfig::default();
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!((cfg.beta1, cfg.beta2, cfg.eps), (0.9, 0.999, 1e-8));
    }
}
