use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// Moment estimates for every parameter of one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update from the stored gradients, then zeroes them.
    /// Frozen parameters are skipped.
    pub fn step(&mut self, params: &mut ParamSet<T>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one = T::one();
        let corr1 = T::lit(1.0 - c.beta1.powi(t));
        let corr2 = T::lit(1.0 - c.beta2.powi(t));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);

        for (i, p) in params.iter_mut().enumerate() {
            if p.trainable {
                let m = self.first[i].data_mut();
                let v = self.second[i].data_mut();
                for (((w, &g), m), v) in p
                    .value
                    .data_mut()
                    .iter_mut()
                    .zip(p.grad.data())
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / corr1;
                    let v_hat = *v / corr2;
                    *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            p.grad.fill(T::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = ParamSet::<f64>::new(0);
        let id = p.add_glorot("w", 2, 2).unwrap();
        let before = p.value(id).clone();
        let mut adam = AdamState::new(&p, AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut p);
        }
        assert_eq!(p.value(id), &before);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        for g in [3.7, -0.02] {
            let mut p = ParamSet::<f64>::new(0);
            let id = p.add_tensor("x", Tensor::scalar(1.0), true).unwrap();
            p.get_mut(id).grad = Tensor::scalar(g);
            let mut adam = AdamState::new(&p, AdamConfig::default());
            adam.step(&mut p);
            let delta = p.value(id).item() - 1.0;
            assert!(
                (delta + 1e-3 * f64::signum(g)).abs() < 1e-8,
                "delta {delta}"
            );
            assert_eq!(p.grad(id).item(), 0.0);
        }
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut p = ParamSet::<f64>::new(0);
        let id = p.add_tensor("e", Tensor::scalar(2.0), false).unwrap();
        p.get_mut(id).grad = Tensor::scalar(1.0);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.step(&mut p);
        assert_eq!(p.value(id).item(), 2.0);
    }
}
