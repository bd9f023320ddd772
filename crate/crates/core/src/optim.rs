//! SGD with momentum and L2 weight decay.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0025,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidOptimizer("learning rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidOptimizer("momentum must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidOptimizer("weight decay must be >= 0"));
        }
        Ok(())
    }
}

/// Optimizer state: one velocity buffer per trainable parameter.
///
/// Update rule: `v ← momentum·v + grad + weight_decay·param`, then
/// `param ← param − lr·v`.
#[derive(Clone, Debug)]
pub struct SgdState {
    pub config: SgdConfig,
    velocity: Vec<Option<Vec<f64>>>,
}

impl SgdState {
    pub fn new(config: SgdConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let velocity = store
            .iter()
            .map(|p| p.trainable.then(|| alloc::vec![0.0; p.value.len()]))
            .collect();
        Ok(Self { config, velocity })
    }

    /// Applies one update to every trainable parameter and clears all gradients.
    /// Fails without touching any parameter when a trainable one has no gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(p) = store.iter().find(|p| p.trainable && p.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        let SgdConfig {
            learning_rate: lr,
            momentum,
            weight_decay: wd,
        } = self.config;
        for (p, vel) in store.iter_mut().zip(&mut self.velocity) {
            let (Some(vel), true) = (vel.as_mut(), p.trainable) else {
                continue;
            };
            let grad = p.grad.take().expect("checked above");
            for ((w, v), g) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(vel.iter_mut())
                .zip(grad.data())
            {
                *v = momentum * *v + g + wd * *w;
                *w -= lr * *v;
            }
        }
        store.zero_grads();
        Ok(())
    }
}
