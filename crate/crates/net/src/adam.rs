use log::warn;
use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction, first and second moments per parameter.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
    skipped: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &Model<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = model.params().iter().map(|(_, p)| vec![T::zero(); p.len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Steps skipped because of a non-finite gradient.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Applies one update. Returns false (and leaves everything unchanged)
    /// when any gradient entry is not finite.
    pub fn step(&mut self, model: &mut Model<T>, grads: &Model<T>, lr: f64) -> bool {
        let g = grads.params();
        if g.iter().any(|(_, t)| t.iter().any(|v| !v.is_finite())) {
            self.skipped += 1;
            warn!("skipping optimizer step {}: non-finite gradient", self.t + 1);
            return false;
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64c(c.beta1), T::from_f64c(c.beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let step = T::from_f64c(lr / bc1);
        let inv_bc2 = T::from_f64c(1.0 / bc2);
        let eps = T::from_f64c(c.eps);
        for (((p, (_, gt)), m), v) in model.params_mut().into_iter().zip(g).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + ob1 * gt[i];
                v[i] = b2 * v[i] + ob2 * gt[i] * gt[i];
                p[i] = p[i] - step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
        true
    }
}
