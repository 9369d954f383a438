use serde::{Deserialize, Serialize};

use super::params::ParameterVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 32,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("sgd.lr", "must be a finite value > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("sgd.momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("sgd.weight_decay", "must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("sgd.batch_size", "must be >= 1"));
        }
        Ok(())
    }
}

/// Heavy-ball SGD: `v <- m*v + (g + wd*theta)`, `theta <- theta - lr*v`.
/// The velocity starts at zero, so the first step is plain SGD.
#[derive(Debug, Clone)]
pub struct Sgd {
    cfg: SgdConfig,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Sgd {
            cfg,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.cfg
    }

    pub fn step_flat(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != grad.len() {
            return Err(Error::Shape(format!(
                "{} parameters with {} gradient entries",
                theta.len(),
                grad.len()
            )));
        }
        if self.velocity.len() != theta.len() {
            if !self.velocity.is_empty() {
                return Err(Error::Shape(
                    "parameter count changed under the optimizer".into(),
                ));
            }
            self.velocity = vec![0.0; theta.len()];
        }
        let SgdConfig {
            learning_rate: lr,
            momentum,
            weight_decay: wd,
            ..
        } = self.cfg;
        for ((t, g), v) in theta.iter_mut().zip(grad).zip(&mut self.velocity) {
            *v = momentum * *v + g + wd * *t;
            *t -= lr * *v;
        }
        Ok(())
    }

    /// Steps every trainable segment using its stored gradient.
    pub fn step(&mut self, params: &mut ParameterVector) -> Result<()> {
        let grad = params.grads_flat()?;
        let mut theta = params.flatten_trainable();
        self.step_flat(&mut theta, &grad)?;
        params.unflatten_trainable(&theta)
    }
}
