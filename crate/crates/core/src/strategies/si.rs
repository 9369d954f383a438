use serde::Serialize;

use super::ewc::{ewc_penalty, ewc_penalty_grad};
use super::Strategy;
use crate::autodiff::Graph;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::models::Network;

#[derive(Debug, Clone, Default, Serialize)]
pub struct SiState {
    pub epsilon: f64,
    /// Consolidated importance.
    pub omega: Vec<f64>,
    /// Path integral of the current task, `sum_steps -g * delta`.
    pub path: Vec<f64>,
    /// Weights at the start of the current task.
    pub anchor: Vec<f64>,
    pub steps: usize,
}

impl SiState {
    pub fn new(epsilon: f64) -> Self {
        SiState {
            epsilon,
            ..Default::default()
        }
    }

    /// Starts tracking from `theta` unless already anchored.
    pub fn anchor_at(&mut self, theta: &[f64]) {
        if self.anchor.is_empty() {
            self.anchor = theta.to_vec();
            self.omega = vec![0.0; theta.len()];
            self.path = vec![0.0; theta.len()];
        }
    }

    /// Adds one optimizer step's contribution `-g_i * delta_i`.
    pub fn accumulate(&mut self, grad: &[f64], delta: &[f64]) -> Result<()> {
        if grad.len() != self.path.len() || delta.len() != self.path.len() {
            return Err(Error::Shape(format!(
                "SI step of length {}/{} does not match {} tracked parameters",
                grad.len(),
                delta.len(),
                self.path.len()
            )));
        }
        for ((w, g), d) in self.path.iter_mut().zip(grad).zip(delta) {
            *w -= g * d;
        }
        self.steps += 1;
        Ok(())
    }

    /// Folds the task's path integral into the importance, normalised by
    /// the squared total displacement plus epsilon, then re-anchors at
    /// `theta`. Negative contributions are clamped to zero so the penalty
    /// stays a nonnegative quadratic. Returns false (and leaves the
    /// importance unchanged) when no step was accumulated.
    pub fn consolidate(&mut self, theta: &[f64]) -> Result<bool> {
        if theta.len() != self.anchor.len() {
            return Err(Error::Shape(
                "SI consolidation: parameter length changed".into(),
            ));
        }
        let updated = self.steps > 0;
        if updated {
            for i in 0..theta.len() {
                let d = theta[i] - self.anchor[i];
                self.omega[i] += (self.path[i] / (d * d + self.epsilon)).max(0.0);
            }
        }
        self.path.iter_mut().for_each(|w| *w = 0.0);
        self.anchor = theta.to_vec();
        self.steps = 0;
        Ok(updated)
    }
}

/// Synaptic intelligence: importance from each parameter's contribution to
/// the loss decrease along the training path.
#[derive(Debug, Clone)]
pub struct Si {
    pub lambda: f64,
    pub state: SiState,
    consolidated: bool,
    warnings: Vec<String>,
}

impl Si {
    pub fn new(lambda: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::config(
                "si.epsilon",
                format!("must be > 0, got {epsilon}"),
            ));
        }
        Ok(Si {
            lambda,
            state: SiState::new(epsilon),
            consolidated: false,
            warnings: Vec::new(),
        })
    }
}

impl Strategy for Si {
    fn name(&self) -> &'static str {
        "si"
    }

    fn label(&self) -> String {
        "SI".into()
    }

    fn before_task(&mut self, net: &mut dyn Network, _task: usize) -> Result<()> {
        self.state.anchor_at(&net.flat_params(&net.regularized()));
        Ok(())
    }

    fn penalty(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        if !self.consolidated {
            return Ok(0.0);
        }
        let s = &self.state;
        ewc_penalty_grad(self.lambda, &s.omega, &s.anchor, theta, grad)?;
        ewc_penalty(self.lambda, &s.omega, &s.anchor, theta)
    }

    fn after_step(&mut self, grad_kws: &[f64], delta: &[f64]) {
        // Lengths are fixed by the layout, so a mismatch is a wiring bug.
        self.state
            .accumulate(grad_kws, delta)
            .expect("SI step length");
    }

    fn after_task(
        &mut self,
        net: &mut dyn Network,
        _g: &mut Graph,
        task: usize,
        _train: &[Sample],
    ) -> Result<()> {
        let theta = net.flat_params(&net.regularized());
        self.state.anchor_at(&theta);
        if self.state.consolidate(&theta)? {
            self.consolidated = true;
        } else {
            let msg = format!(
                "SI consolidated task {task} without any accumulated step; importance unchanged"
            );
            log::warn!("{msg}");
            self.warnings.push(msg);
        }
        Ok(())
    }

    fn extra_params(&self, _net: &dyn Network) -> usize {
        self.state.omega.len() + self.state.anchor.len()
    }

    fn state_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.state).unwrap_or_default()
    }

    fn warnings(&self) -> Vec<String> {
        self.warnings.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consolidation_examples() {
        let mut s = SiState::new(0.1);
        s.anchor_at(&[0.0, 0.0]);
        s.path = vec![0.4, 0.4];
        s.steps = 1;
        assert!(s.consolidate(&[0.1, 0.0]).unwrap());
        assert!((s.omega[0] - 0.4 / 0.11).abs() < 1e-12);
        assert!((s.omega[0] - 3.6364).abs() < 1e-4);
        assert!((s.omega[1] - 4.0).abs() < 1e-12);
        assert_eq!(s.path, vec![0.0, 0.0]);
        assert_eq!(s.anchor, vec![0.1, 0.0]);
    }

    #[test]
    fn consolidate_without_steps_keeps_importance() {
        let mut s = SiState::new(0.1);
        s.anchor_at(&[1.0]);
        assert!(!s.consolidate(&[2.0]).unwrap());
        assert_eq!(s.omega, vec![0.0]);
    }

    #[test]
    fn rejects_nonpositive_epsilon() {
        assert!(Si::new(1.0, 0.0).is_err());
    }
}
