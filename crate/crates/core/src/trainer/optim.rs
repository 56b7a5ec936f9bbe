use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub encoder_lr: f64,
    pub classifier_lr: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
            encoder_lr: 1.6e-3,
            classifier_lr: 1.2e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.encoder_lr > 0.0 && self.classifier_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "momentum must lie in [0, 1) and weight_decay must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffers: ParamStore,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: ParamStore::new(),
        }
    }

    /// Updates every parameter named in `grads` with learning rate `lr(name)`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: impl Fn(&str) -> f64) {
        for (name, g) in grads.iter() {
            let Some(w) = params.get_mut(name) else {
                continue;
            };
            let d = g + &(&*w * self.weight_decay);
            let buf = match self.buffers.get_mut(name) {
                Some(b) => {
                    *b *= self.momentum;
                    *b += &d;
                    b.clone()
                }
                None => {
                    self.buffers.insert(name, d.clone());
                    d
                }
            };
            w.scaled_add(-lr(name), &buf);
        }
    }

    /// Drops the momentum of one parameter, e.g. after re-initialising it.
    pub fn reset(&mut self, name: &str) {
        self.buffers.remove(name);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn momentum_accumulates() {
        let mut p = ParamStore::new();
        p.insert("w", array![[1.0]]);
        let mut g = ParamStore::new();
        g.insert("w", array![[1.0]]);
        let mut sgd = Sgd::new(0.9, 0.0);
        sgd.step(&mut p, &g, |_| 0.1);
        assert!((p.tensor("w")[[0, 0]] - 0.9).abs() < 1e-12);
        sgd.step(&mut p, &g, |_| 0.1);
        // buffer = 0.9 * 1 + 1 = 1.9
        assert!((p.tensor("w")[[0, 0]] - 0.71).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_shrinks() {
        let mut p = ParamStore::new();
        p.insert("w", array![[2.0]]);
        let mut g = ParamStore::new();
        g.insert("w", array![[0.0]]);
        let mut sgd = Sgd::new(0.0, 0.5);
        sgd.step(&mut p, &g, |_| 0.1);
        assert!((p.tensor("w")[[0, 0]] - 1.9).abs() < 1e-12);
    }
}
