//! Learning-rate schedule and the AdamW optimizer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(arg_err!("invalid AdamW settings {self:?}"));
        }
        Ok(())
    }
}

/// Linear warmup to `base` over `warmup` steps, then per-step exponential decay.
pub fn lr_schedule(step: usize, base: f64, warmup: usize, decay: f64) -> f64 {
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else {
        base * decay.powf((step - warmup) as f64)
    }
}

/// Decoupled-weight-decay Adam with bias correction; moments are kept in f64.
#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(AdamW { cfg, step: 0, moments: BTreeMap::new() })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Every gradient is checked before any parameter changes.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor<f32>>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(crate::error::dim_err!("gradient of {name} is {:?}, parameter is {:?}", g.shape(), p.shape()));
            }
            if !g.is_finite() {
                let bad = g.data().iter().filter(|v| !v.is_finite()).count();
                return Err(Error::Training(format!("{bad} non-finite gradient entries in {name} at step {}", self.step + 1)));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, weight_decay } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let (m, v) = self.moments.entry(name.clone()).or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi as f64;
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let update = (*mi / c1) / ((*vi / c2).sqrt() + eps) + weight_decay * *pi as f64;
                *pi = (*pi as f64 - lr * update) as f32;
            }
        }
        Ok(())
    }
}
