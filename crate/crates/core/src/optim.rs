//! Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::nn::ParamSet;
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
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || {
            params
                .values()
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect()
        };
        Adam {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. `grads[i]` is the gradient of parameter `i`, `None` when
    /// the loss does not depend on it.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &[Option<Matrix<T>>]) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.step += 1;
        let f = T::from_f64_lossy;
        let (b1, b2) = (f(self.cfg.beta1), f(self.cfg.beta2));
        let c1 = 1.0 - self.cfg.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.cfg.beta2.powi(self.step as i32);
        let step_size = f(self.cfg.lr / c1);
        let c2_sqrt = f(c2.sqrt());
        let eps = f(self.cfg.eps);
        for (i, p) in params.values_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for (((w, &gk), mk), vk) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *mk = b1 * *mk + (T::one() - b1) * gk;
                *vk = b2 * *vk + (T::one() - b2) * gk * gk;
                *w -= step_size * *mk / (vk.sqrt() / c2_sqrt + eps);
            }
        }
    }
}
