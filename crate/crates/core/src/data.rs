//! Labelled feature samples and the batch-level forward/backward helpers
//! shared by the trainer and the strategies.

use std::sync::Arc;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::{ForwardMode, Network, Trace};

/// One training or test example: a channel-major `[n_mfcc, n_frames]`
/// feature tensor, the task it belongs to and its label within that task.
#[derive(Debug, Clone)]
pub struct Sample {
    pub task: usize,
    pub label: usize,
    pub features: Arc<Tensor>,
}

impl Sample {
    pub fn byte_size(&self) -> usize {
        self.features.len() * std::mem::size_of::<f64>()
    }
}

/// Stacks samples into a `[B, C, T]` batch tensor.
pub fn stack(samples: &[Sample]) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::EmptyData("empty batch".into()))?;
    let shape = first.features.shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape(format!(
            "sample features must be 2-D, got {shape:?}"
        )));
    }
    let mut data = Vec::with_capacity(samples.len() * first.features.len());
    for s in samples {
        if s.features.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "sample shape {:?} differs from batch shape {shape:?}",
                s.features.shape()
            )));
        }
        data.extend_from_slice(s.features.data());
    }
    Tensor::new(vec![samples.len(), shape[0], shape[1]], data)
}

/// Forward pass plus the batch cross-entropy. Rows of different tasks go
/// through their own heads; the loss is the row-weighted mean, i.e. the
/// mean per-sample loss over the whole batch.
pub fn forward_loss(
    net: &mut dyn Network,
    g: &mut Graph,
    samples: &[Sample],
    mode: ForwardMode,
) -> Result<(Var, Trace)> {
    let x = g.constant(stack(samples)?)?;
    let tasks: Vec<usize> = samples.iter().map(|s| s.task).collect();
    let trace = net.forward(g, x, &tasks, mode)?;
    let b = samples.len() as f64;
    let mut total: Option<Var> = None;
    for out in &trace.outputs {
        let labels: Vec<usize> = out.rows.iter().map(|&r| samples[r].label).collect();
        let ce = g.softmax_cross_entropy(out.logits, &labels)?;
        let part = if out.rows.len() == samples.len() {
            ce
        } else {
            g.scale(ce, out.rows.len() as f64 / b)?
        };
        total = Some(match total {
            Some(t) => g.add(t, part)?,
            None => part,
        });
    }
    let loss = total.ok_or_else(|| Error::EmptyData("network produced no outputs".into()))?;
    Ok((loss, trace))
}

/// Loss and flat gradient over the components `idx`.
pub fn batch_gradient(
    net: &mut dyn Network,
    g: &mut Graph,
    samples: &[Sample],
    mode: ForwardMode,
    idx: &[usize],
) -> Result<(f64, Vec<f64>)> {
    g.clear();
    let (loss, trace) = forward_loss(net, g, samples, mode)?;
    let value = g.value(loss)?.item();
    g.backward(loss)?;
    let grad = net.flat_grad(g, &trace, idx)?;
    Ok((value, grad))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 predictions for `samples` routed through `task`, in eval mode.
pub fn predict(
    net: &mut dyn Network,
    samples: &[Sample],
    task: usize,
    chunk: usize,
) -> Result<Vec<usize>> {
    let mut g = Graph::new();
    let mut out = Vec::with_capacity(samples.len());
    for batch in samples.chunks(chunk.max(1)) {
        g.clear();
        let x = g.constant(stack(batch)?)?;
        let trace = net.forward(&mut g, x, &vec![task; batch.len()], ForwardMode::Eval)?;
        let logits = g.value(trace.outputs[0].logits)?;
        let k = logits.shape()[1];
        out.extend(logits.data().chunks(k).map(argmax));
    }
    Ok(out)
}

/// Top-1 accuracy of `task`'s evaluation route on its test samples.
pub fn evaluate(net: &mut dyn Network, samples: &[Sample], task: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyData(format!("task {task} has no test samples")));
    }
    let preds = predict(net, samples, task, 256)?;
    let correct = preds
        .iter()
        .zip(samples)
        .filter(|(p, s)| **p == s.label)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}
