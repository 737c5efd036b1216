use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Decoupled-weight-decay Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

pub struct AdamW<T> {
    cfg: AdamWConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: i32,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, shapes: &[usize]) -> Self {
        Self {
            cfg,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let c = &self.cfg;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let lr = T::of(c.lr);
        let decay = T::one() - lr * T::of(c.weight_decay);
        let bc1 = T::one() - T::of(c.beta1.powi(self.step));
        let bc2 = T::one() - T::of(c.beta2.powi(self.step));
        let eps = T::of(c.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.len() != g.len() {
                return Err(Error::Shape("gradient length differs from parameter length".into()));
            }
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                p[i] = p[i] * decay - lr * update;
            }
        }
        Ok(())
    }
}
