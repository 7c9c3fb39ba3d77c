//! Adam with bias correction. State is kept per parameter slot, indexed the
//! same way as the registry slice handed to `step`.

use crate::error::{SgaError, SgaResult};
use crate::scalar::{s, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug)]
pub struct Adam<S: Scalar> {
    cfg: AdamConfig,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig, params: &[Tensor<S>]) -> Self {
        Adam {
            cfg,
            m: params.iter().map(|p| vec![S::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.len()]).collect(),
            t: 0,
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// One update over every parameter. Each tensor must carry a gradient
    /// (zero gradients are fine; absent ones are a contract error). All
    /// gradients are cleared on success.
    pub fn step(&mut self, params: &mut [Tensor<S>]) -> SgaResult<()> {
        if params.len() != self.m.len() {
            return Err(SgaError::contract(
                "adam.step",
                format!("optimizer built for {} params, given {}", self.m.len(), params.len()),
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if p.grad().is_none() {
                return Err(SgaError::contract(
                    "adam.step",
                    format!("param {i} has no gradient; run backward first"),
                ));
            }
        }
        self.t += 1;
        let b1 = s::<S>(self.cfg.beta1);
        let b2 = s::<S>(self.cfg.beta2);
        let one = S::one();
        let lr = s::<S>(self.cfg.lr);
        let eps = s::<S>(self.cfg.eps);
        let bc1 = one - s::<S>(self.cfg.beta1.powi(self.t as i32));
        let bc2 = one - s::<S>(self.cfg.beta2.powi(self.t as i32));
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = p.data_mut();
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] = data[j] - lr * mhat / (vhat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}
