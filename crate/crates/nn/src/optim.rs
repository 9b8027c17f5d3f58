use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum_decay: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum_decay: 0.004,
        }
    }
}

impl NadamConfig {
    /// Momentum coefficient scheduled for step `t` (1-based).
    pub fn mu(&self, t: u64) -> f64 {
        self.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * self.momentum_decay))
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.momentum_decay >= 0.0;
        if !ok {
            return Err(NnError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Adam with Nesterov momentum and a decaying momentum schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Nadam<T> {
    pub cfg: NadamConfig,
    pub step: u64,
    pub mu_product: f64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Nadam<T> {
    pub fn new(cfg: NadamConfig, params: &[&Tensor<T>]) -> Self {
        Nadam {
            cfg,
            step: 0,
            mu_product: 1.0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} parameter tensors", self.m.len()),
                actual: format!("{} params, {} grads", params.len(), grads.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            p.expect_shape(m.shape())?;
            g.expect_shape(m.shape())?;
        }
        let c = self.cfg;
        let t = self.step + 1;
        let mu = c.mu(t);
        let mu_next = c.mu(t + 1);
        let mu_product = self.mu_product * mu;
        let bias2 = 1.0 - c.beta2.powf(t as f64);
        let grad_coef = c.lr * (1.0 - mu) / (1.0 - mu_product);
        let mom_coef = c.lr * mu_next / (1.0 - mu_product * mu_next);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gf = gv.f64();
                let mf = c.beta1 * mv.f64() + (1.0 - c.beta1) * gf;
                let vf = c.beta2 * vv.f64() + (1.0 - c.beta2) * gf * gf;
                *mv = T::of(mf);
                *vv = T::of(vf);
                let denom = (vf / bias2).sqrt() + c.eps;
                *pv = T::of(pv.f64() - grad_coef * gf / denom - mom_coef * mf / denom);
            }
        }
        self.step = t;
        self.mu_product = mu_product;
        Ok(())
    }
}
