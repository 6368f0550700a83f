use serde::{Deserialize, Serialize};

use super::array::{Array, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
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
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
///
/// Moments are created lazily as zeros on the first step, one pair per
/// parameter in the order the parameters are passed.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Array<T>>,
    second: Vec<Array<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub(crate) fn from_parts(
        config: AdamConfig,
        step: u64,
        first: Vec<Array<T>>,
        second: Vec<Array<T>>,
    ) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::invalid("adam", "moment lists differ in length"));
        }
        for (m, v) in first.iter().zip(&second) {
            if m.shape() != v.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    left: m.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            config,
            step,
            first,
            second,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Array<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Array<T>] {
        &self.second
    }

    /// Applies one update to every parameter.
    pub fn step(&mut self, params: &mut [&mut Array<T>], grads: &[Array<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(
                "adam_step",
                format!("{} parameters but {} gradients", params.len(), grads.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Array::zeros(p.shape())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::invalid(
                "adam_step",
                "parameter layout differs from the optimizer state",
            ));
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let corr1 = T::of(1.0 - c.beta1.powi(t));
        let corr2 = T::of(1.0 - c.beta2.powi(t));
        let lr = T::of(c.lr);
        let eps = T::of(c.epsilon);

        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.first[i].data_mut();
            for (mv, &gv) in m.iter_mut().zip(g) {
                *mv = b1 * *mv + (one - b1) * gv;
            }
            let v = self.second[i].data_mut();
            for (vv, &gv) in v.iter_mut().zip(g) {
                *vv = b2 * *vv + (one - b2) * gv * gv;
            }
            let m = self.first[i].data();
            let v = self.second[i].data();
            for ((pv, &mv), &vv) in p.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mv / corr1;
                let vhat = vv / corr2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
