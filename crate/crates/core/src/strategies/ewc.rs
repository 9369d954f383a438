use serde::Serialize;

use super::Strategy;
use crate::autodiff::Graph;
use crate::data::{batch_gradient, Sample};
use crate::error::{Error, Result};
use crate::models::{ForwardMode, Network};

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!(
            "{what}: length {a} does not match parameter length {b}"
        )));
    }
    Ok(())
}

/// `(lambda / 2) * sum_i omega_i (theta_i - anchor_i)^2`.
pub fn ewc_penalty(lambda: f64, omega: &[f64], anchor: &[f64], theta: &[f64]) -> Result<f64> {
    check_len("importance", omega.len(), theta.len())?;
    check_len("anchor", anchor.len(), theta.len())?;
    let s: f64 = omega
        .iter()
        .zip(anchor)
        .zip(theta)
        .map(|((o, a), t)| o * (t - a) * (t - a))
        .sum();
    Ok(0.5 * lambda * s)
}

/// Adds `lambda * omega * (theta - anchor)` into `grad`.
pub fn ewc_penalty_grad(
    lambda: f64,
    omega: &[f64],
    anchor: &[f64],
    theta: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    check_len("importance", omega.len(), theta.len())?;
    check_len("anchor", anchor.len(), theta.len())?;
    check_len("gradient", grad.len(), theta.len())?;
    for (((g, o), a), t) in grad.iter_mut().zip(omega).zip(anchor).zip(theta) {
        *g += lambda * o * (t - a);
    }
    Ok(())
}

/// Diagonal empirical Fisher: the mean of squared per-sample gradients.
pub fn fisher_from_grads<I>(grads: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut sum: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for g in grads {
        let acc = sum.get_or_insert_with(|| vec![0.0; g.len()]);
        check_len("per-sample gradient", g.len(), acc.len())?;
        for (a, x) in acc.iter_mut().zip(&g) {
            *a += x * x;
        }
        n += 1;
    }
    let mut acc =
        sum.ok_or_else(|| Error::EmptyData("Fisher estimate needs at least one sample".into()))?;
    for a in &mut acc {
        *a /= n as f64;
    }
    Ok(acc)
}

/// Fisher importance of the regularized parameters at the current weights,
/// from per-sample gradients of the task loss with running batch-norm moments.
pub fn ewc_fisher(
    net: &mut dyn Network,
    g: &mut Graph,
    data: &[Sample],
    task: usize,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyData(format!(
            "task {task} has no samples for the Fisher estimate"
        )));
    }
    let idx = net.regularized();
    let mut acc = vec![0.0; net.count_parameters(&idx)];
    for s in data {
        let (_, grad) = batch_gradient(
            net,
            g,
            std::slice::from_ref(s),
            ForwardMode::EvalGrad { task },
            &idx,
        )?;
        for (a, x) in acc.iter_mut().zip(&grad) {
            *a += x * x;
        }
    }
    let n = data.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EwcState {
    pub lambda: f64,
    /// Importance summed over finished tasks.
    pub omega: Vec<f64>,
    /// Weights at the end of the last finished task.
    pub anchor: Vec<f64>,
}

/// Online EWC: Fisher maps are summed across tasks and the anchor moves to
/// the end of each task.
#[derive(Debug, Clone)]
pub struct Ewc {
    pub state: EwcState,
}

impl Ewc {
    pub fn new(lambda: f64) -> Self {
        Ewc {
            state: EwcState {
                lambda,
                ..Default::default()
            },
        }
    }
}

impl Strategy for Ewc {
    fn name(&self) -> &'static str {
        "ewc"
    }

    fn label(&self) -> String {
        "EWC".into()
    }

    fn penalty(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let s = &self.state;
        if s.anchor.is_empty() {
            return Ok(0.0);
        }
        ewc_penalty_grad(s.lambda, &s.omega, &s.anchor, theta, grad)?;
        ewc_penalty(s.lambda, &s.omega, &s.anchor, theta)
    }

    fn after_task(
        &mut self,
        net: &mut dyn Network,
        g: &mut Graph,
        task: usize,
        train: &[Sample],
    ) -> Result<()> {
        let fisher = ewc_fisher(net, g, train, task)?;
        let s = &mut self.state;
        if s.omega.is_empty() {
            s.omega = fisher;
        } else {
            check_len("importance", fisher.len(), s.omega.len())?;
            for (o, f) in s.omega.iter_mut().zip(fisher) {
                *o += f;
            }
        }
        s.anchor = net.flat_params(&net.regularized());
        Ok(())
    }

    fn extra_params(&self, _net: &dyn Network) -> usize {
        self.state.omega.len() + self.state.anchor.len()
    }

    fn state_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.state).unwrap_or_default()
    }
}
