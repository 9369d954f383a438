//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards
//! is a valid topological order for the reverse sweep. Leaf gradients
//! persist across `backward` calls and accumulate; interior gradients are
//! scratch space local to each sweep.

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    idx: usize,
    generation: u64,
}

/// Normalization statistics for [`Graph::batch_norm`].
#[derive(Debug, Clone, Copy)]
pub enum BnStats<'a> {
    /// Normalize with the moments of the current batch (training).
    Batch,
    /// Normalize with stored running moments (evaluation).
    Running { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel moments of a batch, returned so callers can update running stats.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Elements reduced per channel.
    pub count: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        c: f64,
    },
    Sum {
        x: usize,
    },
    GlobalAvgPool {
        x: usize,
    },
    Dense {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    GatherRows {
        x: usize,
        rows: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Persistent gradient, leaves only.
    grad: Option<Vec<f64>>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    generation: u64,
}

/// Valid output positions `t` for kernel tap `k`: `0 <= t*stride + k - pad < len`.
fn tap_range(k: usize, stride: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi = if len + pad > k {
        out_len.min((len + pad - k - 1) / stride + 1)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad >= kernel).then(|| (len + 2 * pad - kernel) / stride + 1)
}

fn slot(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node. Vars issued before this call become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.generation += 1;
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.generation != self.generation || v.idx >= self.nodes.len() {
            return Err(Error::GraphFreed);
        }
        Ok(v.idx)
    }

    fn push(
        &mut self,
        value: Tensor,
        op: Op,
        requires_grad: bool,
        name: &'static str,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var {
            idx: self.nodes.len() - 1,
            generation: self.generation,
        })
    }

    /// Registers a leaf. The tensor's data is copied; its `requires_grad` flag is honoured.
    pub fn leaf(&mut self, tensor: &Tensor) -> Result<Var> {
        let rg = tensor.requires_grad();
        let value = Tensor::new(tensor.shape().to_vec(), tensor.data().to_vec())?;
        self.push(value, Op::Leaf, rg, "leaf")
    }

    /// Registers a leaf that never receives gradients, taking ownership of the data.
    pub fn constant(&mut self, tensor: Tensor) -> Result<Var> {
        let tensor = tensor.with_requires_grad(false);
        self.push(tensor, Op::Leaf, false, "constant")
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let i = self.index(v)?;
        Ok(&self.nodes[i].value)
    }

    /// Accumulated gradient of a leaf, if any sweep has reached it.
    pub fn grad(&self, v: Var) -> Result<Option<&[f64]>> {
        let i = self.index(v)?;
        Ok(self.nodes[i].grad.as_deref())
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    /// Temporal convolution. `x: [B, C_in, T]`, `w: [C_out, C_in, K]`, `b: [C_out]`,
    /// zero padding `pad` on both ends.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xi, wi) = (self.index(x)?, self.index(w)?);
        let bi = b.map(|b| self.index(b)).transpose()?;
        let xs = self.nodes[xi].value.shape();
        let ws = self.nodes[wi].value.shape();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || stride == 0 {
            return Err(Error::Shape(format!(
                "conv1d input {xs:?} with kernel {ws:?}"
            )));
        }
        let (batch, cin, len) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        if let Some(bi) = bi {
            if self.nodes[bi].value.shape() != [cout] {
                return Err(Error::Shape(format!(
                    "conv1d bias {:?} for {cout} output channels",
                    self.nodes[bi].value.shape()
                )));
            }
        }
        let out_len = conv_out_len(len, k, stride, pad).ok_or_else(|| {
            Error::Shape(format!("conv1d kernel {k} longer than padded input {len}"))
        })?;

        let xd = self.nodes[xi].value.data();
        let wd = self.nodes[wi].value.data();
        let mut out = vec![0.0; batch * cout * out_len];
        for bt in 0..batch {
            for co in 0..cout {
                let y = &mut out[(bt * cout + co) * out_len..(bt * cout + co + 1) * out_len];
                if let Some(bi) = bi {
                    y.fill(self.nodes[bi].value.data()[co]);
                }
                for ci in 0..cin {
                    let xrow = &xd[(bt * cin + ci) * len..(bt * cin + ci + 1) * len];
                    let wrow = &wd[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                    for (tap, &wv) in wrow.iter().enumerate() {
                        let (lo, hi) = tap_range(tap, stride, pad, len, out_len);
                        if lo >= hi {
                            continue;
                        }
                        let start = lo * stride + tap - pad;
                        if stride == 1 {
                            for (o, xv) in y[lo..hi].iter_mut().zip(&xrow[start..start + hi - lo]) {
                                *o += wv * xv;
                            }
                        } else {
                            for (o, xv) in y[lo..hi]
                                .iter_mut()
                                .zip(xrow[start..].iter().step_by(stride))
                            {
                                *o += wv * xv;
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(xi) || self.rg(wi) || bi.is_some_and(|b| self.rg(b));
        let value = Tensor::new(vec![batch, cout, out_len], out)?;
        self.push(
            value,
            Op::Conv1d {
                x: xi,
                w: wi,
                b: bi,
                stride,
                pad,
            },
            rg,
            "conv1d",
        )
    }

    /// Batch normalization over every axis except axis 1 (channels). Accepts
    /// `[B, C]` or `[B, C, T]`. With [`BnStats::Batch`] the batch moments are returned.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: BnStats<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchMoments>)> {
        let (xi, gi, bi) = (self.index(x)?, self.index(gamma)?, self.index(beta)?);
        let xs = self.nodes[xi].value.shape().to_vec();
        if xs.len() < 2 || xs.len() > 3 {
            return Err(Error::Shape(format!("batch_norm input {xs:?}")));
        }
        let (batch, ch) = (xs[0], xs[1]);
        let inner = if xs.len() == 3 { xs[2] } else { 1 };
        if self.nodes[gi].value.shape() != [ch] || self.nodes[bi].value.shape() != [ch] {
            return Err(Error::Shape(format!(
                "batch_norm affine params for {ch} channels"
            )));
        }
        let count = batch * inner;
        let xd = self.nodes[xi].value.data();
        let (mean, var, batch_stats) = match stats {
            BnStats::Batch => {
                if count < 2 {
                    return Err(Error::Shape(
                        "batch_norm needs at least 2 elements per channel".into(),
                    ));
                }
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let mut s = 0.0;
                    for b in 0..batch {
                        s += xd[(b * ch + c) * inner..(b * ch + c + 1) * inner]
                            .iter()
                            .sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut sq = 0.0;
                    for b in 0..batch {
                        sq += xd[(b * ch + c) * inner..(b * ch + c + 1) * inner]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    mean[c] = m;
                    var[c] = sq / count as f64;
                }
                (mean, var, true)
            }
            BnStats::Running { mean, var } => {
                if mean.len() != ch || var.len() != ch {
                    return Err(Error::Shape(format!("running stats for {ch} channels")));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gd = self.nodes[gi].value.data();
        let bd = self.nodes[bi].value.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for b in 0..batch {
            for c in 0..ch {
                let r = (b * ch + c) * inner..(b * ch + c + 1) * inner;
                for j in r {
                    let h = (xd[j] - mean[c]) * inv_std[c];
                    xhat[j] = h;
                    out[j] = gd[c] * h + bd[c];
                }
            }
        }
        let rg = self.rg(xi) || self.rg(gi) || self.rg(bi);
        let value = Tensor::new(xs, out)?;
        let moments = batch_stats.then_some(BatchMoments { mean, var, count });
        let v = self.push(
            value,
            Op::BatchNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
            "batch_norm",
        )?;
        Ok((v, moments))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let t = &self.nodes[xi].value;
        let value = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| v.max(0.0)).collect(),
        )?;
        let rg = self.rg(xi);
        self.push(value, Op::Relu { x: xi }, rg, "relu")
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str) -> Result<(usize, usize)> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        if self.nodes[ai].value.shape() != self.nodes[bi].value.shape() {
            return Err(Error::Shape(format!(
                "{name}: {:?} vs {:?}",
                self.nodes[ai].value.shape(),
                self.nodes[bi].value.shape()
            )));
        }
        Ok((ai, bi))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.binary(a, b, "add")?;
        let (ta, tb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(ai) || self.rg(bi);
        self.push(value, Op::Add { a: ai, b: bi }, rg, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.binary(a, b, "mul")?;
        let (ta, tb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(ai) || self.rg(bi);
        self.push(value, Op::Mul { a: ai, b: bi }, rg, "mul")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xi = self.index(x)?;
        let t = &self.nodes[xi].value;
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect())?;
        let rg = self.rg(xi);
        self.push(value, Op::Scale { x: xi, c }, rg, "scale")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let s = self.nodes[xi].value.data().iter().sum();
        let rg = self.rg(xi);
        self.push(Tensor::scalar(s), Op::Sum { x: xi }, rg, "sum")
    }

    /// `[B, C, T] -> [B, C]`, mean over time.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let t = &self.nodes[xi].value;
        let s = t.shape();
        if s.len() != 3 || s[2] == 0 {
            return Err(Error::Shape(format!("global_avg_pool input {s:?}")));
        }
        let (b, c, len) = (s[0], s[1], s[2]);
        let data = t
            .data()
            .chunks(len)
            .map(|r| r.iter().sum::<f64>() / len as f64)
            .collect();
        let value = Tensor::new(vec![b, c], data)?;
        let rg = self.rg(xi);
        self.push(value, Op::GlobalAvgPool { x: xi }, rg, "global_avg_pool")
    }

    /// Fully connected layer. `x: [B, In]`, `w: [Out, In]`, `b: [Out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xi, wi) = (self.index(x)?, self.index(w)?);
        let bi = b.map(|b| self.index(b)).transpose()?;
        let xs = self.nodes[xi].value.shape();
        let ws = self.nodes[wi].value.shape();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::Shape(format!(
                "dense input {xs:?} with weight {ws:?}"
            )));
        }
        let (batch, fan_in, fan_out) = (xs[0], xs[1], ws[0]);
        if let Some(bi) = bi {
            if self.nodes[bi].value.shape() != [fan_out] {
                return Err(Error::Shape(format!("dense bias for {fan_out} outputs")));
            }
        }
        let xd = self.nodes[xi].value.data();
        let wd = self.nodes[wi].value.data();
        let mut out = vec![0.0; batch * fan_out];
        for b in 0..batch {
            let xr = &xd[b * fan_in..(b + 1) * fan_in];
            for o in 0..fan_out {
                let wr = &wd[o * fan_in..(o + 1) * fan_in];
                let bias = bi.map_or(0.0, |bi| self.nodes[bi].value.data()[o]);
                out[b * fan_out + o] = bias + xr.iter().zip(wr).map(|(a, c)| a * c).sum::<f64>();
            }
        }
        let rg = self.rg(xi) || self.rg(wi) || bi.is_some_and(|b| self.rg(b));
        let value = Tensor::new(vec![batch, fan_out], out)?;
        self.push(
            value,
            Op::Dense {
                x: xi,
                w: wi,
                b: bi,
            },
            rg,
            "dense",
        )
    }

    /// Selects rows of a `[B, F]` tensor.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xi = self.index(x)?;
        let t = &self.nodes[xi].value;
        let s = t.shape();
        if s.len() != 2 || rows.iter().any(|&r| r >= s[0]) {
            return Err(Error::Shape(format!("gather_rows {rows:?} from {s:?}")));
        }
        let f = s[1];
        let mut data = Vec::with_capacity(rows.len() * f);
        for &r in rows {
            data.extend_from_slice(&t.data()[r * f..(r + 1) * f]);
        }
        let value = Tensor::new(vec![rows.len(), f], data)?;
        let rg = self.rg(xi);
        self.push(
            value,
            Op::GatherRows {
                x: xi,
                rows: rows.to_vec(),
            },
            rg,
            "gather_rows",
        )
    }

    /// Mean cross-entropy of `logits: [B, N]` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let li = self.index(logits)?;
        let t = &self.nodes[li].value;
        let s = t.shape();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(Error::Shape(format!(
                "cross-entropy logits {s:?} with {} labels",
                labels.len()
            )));
        }
        let n = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::Shape(format!(
                "label {bad} out of range for {n} classes"
            )));
        }
        let mut probs = vec![0.0; t.len()];
        let mut loss = 0.0;
        for (b, &label) in labels.iter().enumerate() {
            let row = &t.data()[b * n..(b + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for (p, v) in probs[b * n..(b + 1) * n].iter_mut().zip(row) {
                *p = (v - max).exp() / z;
            }
            loss += z.ln() + max - row[label];
        }
        loss /= labels.len() as f64;
        let rg = self.rg(li);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits: li,
                labels: labels.to_vec(),
                probs,
            },
            rg,
            "softmax_cross_entropy",
        )
    }

    /// Reverse sweep from a scalar. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.index(loss)?;
        let shape = self.nodes[li].value.shape();
        if numel(shape) != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        grads[li] = Some(vec![1.0]);

        for i in (0..=li).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(dy);
                    continue;
                }
                &Op::Conv1d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let xs = self.nodes[x].value.shape();
                    let (batch, cin, len) = (xs[0], xs[1], xs[2]);
                    let ws = self.nodes[w].value.shape();
                    let (cout, k) = (ws[0], ws[2]);
                    let out_len = node.value.shape()[2];
                    let xd = self.nodes[x].value.data();
                    let wd = self.nodes[w].value.data();
                    if let Some(b) = b.filter(|&b| self.rg(b)) {
                        let db = slot(&mut grads, b, cout);
                        for bt in 0..batch {
                            for (co, d) in db.iter_mut().enumerate() {
                                let base = (bt * cout + co) * out_len;
                                *d += dy[base..base + out_len].iter().sum::<f64>();
                            }
                        }
                    }
                    if self.rg(w) {
                        let dw = slot(&mut grads, w, cout * cin * k);
                        for bt in 0..batch {
                            for co in 0..cout {
                                let dyr =
                                    &dy[(bt * cout + co) * out_len..(bt * cout + co + 1) * out_len];
                                for ci in 0..cin {
                                    let xrow =
                                        &xd[(bt * cin + ci) * len..(bt * cin + ci + 1) * len];
                                    for tap in 0..k {
                                        let (lo, hi) = tap_range(tap, stride, pad, len, out_len);
                                        if lo >= hi {
                                            continue;
                                        }
                                        let start = lo * stride + tap - pad;
                                        let acc: f64 = if stride == 1 {
                                            dyr[lo..hi]
                                                .iter()
                                                .zip(&xrow[start..start + hi - lo])
                                                .map(|(a, b)| a * b)
                                                .sum()
                                        } else {
                                            dyr[lo..hi]
                                                .iter()
                                                .zip(xrow[start..].iter().step_by(stride))
                                                .map(|(a, b)| a * b)
                                                .sum()
                                        };
                                        dw[(co * cin + ci) * k + tap] += acc;
                                    }
                                }
                            }
                        }
                    }
                    if self.rg(x) {
                        let dx = slot(&mut grads, x, batch * cin * len);
                        for bt in 0..batch {
                            for co in 0..cout {
                                let dyr =
                                    &dy[(bt * cout + co) * out_len..(bt * cout + co + 1) * out_len];
                                for ci in 0..cin {
                                    let dxr =
                                        &mut dx[(bt * cin + ci) * len..(bt * cin + ci + 1) * len];
                                    let wrow = &wd[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                                    for (tap, &wv) in wrow.iter().enumerate() {
                                        let (lo, hi) = tap_range(tap, stride, pad, len, out_len);
                                        if lo >= hi {
                                            continue;
                                        }
                                        let start = lo * stride + tap - pad;
                                        if stride == 1 {
                                            for (d, g) in dxr[start..start + hi - lo]
                                                .iter_mut()
                                                .zip(&dyr[lo..hi])
                                            {
                                                *d += wv * g;
                                            }
                                        } else {
                                            for (d, g) in dxr[start..]
                                                .iter_mut()
                                                .step_by(stride)
                                                .zip(&dyr[lo..hi])
                                            {
                                                *d += wv * g;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (x, gamma, beta, batch_stats) = (*x, *gamma, *beta, *batch_stats);
                    let s = node.value.shape();
                    let (batch, ch) = (s[0], s[1]);
                    let inner = if s.len() == 3 { s[2] } else { 1 };
                    let count = (batch * inner) as f64;
                    let gd = self.nodes[gamma].value.data();
                    let mut sum_dy = vec![0.0; ch];
                    let mut sum_dy_xhat = vec![0.0; ch];
                    for b in 0..batch {
                        for c in 0..ch {
                            for j in (b * ch + c) * inner..(b * ch + c + 1) * inner {
                                sum_dy[c] += dy[j];
                                sum_dy_xhat[c] += dy[j] * xhat[j];
                            }
                        }
                    }
                    if self.rg(gamma) {
                        for (d, v) in slot(&mut grads, gamma, ch).iter_mut().zip(&sum_dy_xhat) {
                            *d += v;
                        }
                    }
                    if self.rg(beta) {
                        for (d, v) in slot(&mut grads, beta, ch).iter_mut().zip(&sum_dy) {
                            *d += v;
                        }
                    }
                    if self.rg(x) {
                        let dx = slot(&mut grads, x, xhat.len());
                        for b in 0..batch {
                            for c in 0..ch {
                                let k = gd[c] * inv_std[c];
                                for j in (b * ch + c) * inner..(b * ch + c + 1) * inner {
                                    dx[j] += if batch_stats {
                                        k * (dy[j]
                                            - sum_dy[c] / count
                                            - xhat[j] * sum_dy_xhat[c] / count)
                                    } else {
                                        k * dy[j]
                                    };
                                }
                            }
                        }
                    }
                }
                &Op::Relu { x } => {
                    if self.rg(x) {
                        let xd = self.nodes[x].value.data();
                        let dx = slot(&mut grads, x, xd.len());
                        for ((d, g), v) in dx.iter_mut().zip(&dy).zip(xd) {
                            if *v > 0.0 {
                                *d += g;
                            }
                        }
                    }
                }
                &Op::Add { a, b } => {
                    for p in [a, b] {
                        if self.rg(p) {
                            for (d, g) in slot(&mut grads, p, dy.len()).iter_mut().zip(&dy) {
                                *d += g;
                            }
                        }
                    }
                }
                &Op::Mul { a, b } => {
                    for (p, other) in [(a, b), (b, a)] {
                        if self.rg(p) {
                            let od = self.nodes[other].value.data();
                            for ((d, g), o) in
                                slot(&mut grads, p, dy.len()).iter_mut().zip(&dy).zip(od)
                            {
                                *d += g * o;
                            }
                        }
                    }
                }
                &Op::Scale { x, c } => {
                    if self.rg(x) {
                        for (d, g) in slot(&mut grads, x, dy.len()).iter_mut().zip(&dy) {
                            *d += c * g;
                        }
                    }
                }
                &Op::Sum { x } => {
                    if self.rg(x) {
                        let n = self.nodes[x].value.len();
                        for d in slot(&mut grads, x, n).iter_mut() {
                            *d += dy[0];
                        }
                    }
                }
                &Op::GlobalAvgPool { x } => {
                    if self.rg(x) {
                        let len = self.nodes[x].value.shape()[2];
                        let n = self.nodes[x].value.len();
                        let dx = slot(&mut grads, x, n);
                        for (row, g) in dx.chunks_mut(len).zip(&dy) {
                            let v = g / len as f64;
                            row.iter_mut().for_each(|d| *d += v);
                        }
                    }
                }
                &Op::Dense { x, w, b } => {
                    let xs = self.nodes[x].value.shape();
                    let (batch, fan_in) = (xs[0], xs[1]);
                    let fan_out = self.nodes[w].value.shape()[0];
                    let xd = self.nodes[x].value.data();
                    let wd = self.nodes[w].value.data();
                    if let Some(b) = b.filter(|&b| self.rg(b)) {
                        let db = slot(&mut grads, b, fan_out);
                        for row in dy.chunks(fan_out) {
                            for (d, g) in db.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                    }
                    if self.rg(w) {
                        let dw = slot(&mut grads, w, fan_out * fan_in);
                        for bt in 0..batch {
                            let xr = &xd[bt * fan_in..(bt + 1) * fan_in];
                            for o in 0..fan_out {
                                let g = dy[bt * fan_out + o];
                                for (d, xv) in dw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(xr) {
                                    *d += g * xv;
                                }
                            }
                        }
                    }
                    if self.rg(x) {
                        let dx = slot(&mut grads, x, batch * fan_in);
                        for bt in 0..batch {
                            for o in 0..fan_out {
                                let g = dy[bt * fan_out + o];
                                let wr = &wd[o * fan_in..(o + 1) * fan_in];
                                for (d, wv) in dx[bt * fan_in..(bt + 1) * fan_in].iter_mut().zip(wr)
                                {
                                    *d += g * wv;
                                }
                            }
                        }
                    }
                }
                Op::GatherRows { x, rows } => {
                    let x = *x;
                    if self.rg(x) {
                        let n = self.nodes[x].value.len();
                        let f = self.nodes[x].value.shape()[1];
                        let dx = slot(&mut grads, x, n);
                        for (j, &r) in rows.iter().enumerate() {
                            for (d, g) in dx[r * f..(r + 1) * f]
                                .iter_mut()
                                .zip(&dy[j * f..(j + 1) * f])
                            {
                                *d += g;
                            }
                        }
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let li = *logits;
                    if self.rg(li) {
                        let n = probs.len() / labels.len();
                        let scale = dy[0] / labels.len() as f64;
                        let dx = slot(&mut grads, li, probs.len());
                        for (b, &label) in labels.iter().enumerate() {
                            for j in 0..n {
                                let onehot = if j == label { 1.0 } else { 0.0 };
                                dx[b * n + j] += scale * (probs[b * n + j] - onehot);
                            }
                        }
                    }
                }
            }
        }

        for (i, g) in grads.into_iter().enumerate() {
            if let (Some(g), Op::Leaf) = (g, &self.nodes[i].op) {
                if !self.nodes[i].requires_grad {
                    continue;
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("backward"));
                }
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}
