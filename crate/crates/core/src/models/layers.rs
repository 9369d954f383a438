use rand::Rng;
use serde::Serialize;

use crate::autodiff::{BnStats, Bound, Graph, ParameterVector, SegmentKind, Tensor, Var};
use crate::error::Result;
use crate::seed::rng_for;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// How batch norm behaves in one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch moments; running moments are updated when `update_stats` is set.
    Train { update_stats: bool },
    /// Running moments.
    Eval,
}

fn uniform_init(seed: u64, key: &str, shape: &[usize], bound: f64) -> Tensor {
    let mut rng = rng_for(seed, &format!("init/{key}"));
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches by construction")
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    weight: usize,
    bias: Option<usize>,
}

impl Conv1d {
    /// Kaiming-uniform (ReLU gain) init; "same" padding for odd kernels.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        pv: &mut ParameterVector,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        seed: u64,
        ns: &str,
    ) -> Result<Self> {
        let fan_in = (in_ch * kernel) as f64;
        let w = uniform_init(
            seed,
            &format!("{ns}/{name}.weight"),
            &[out_ch, in_ch, kernel],
            (6.0 / fan_in).sqrt(),
        );
        let weight = pv.push(format!("{name}.weight"), w, SegmentKind::Trainable)?;
        let bias = bias
            .then(|| {
                pv.push(
                    format!("{name}.bias"),
                    Tensor::zeros(&[out_ch]),
                    SegmentKind::Trainable,
                )
            })
            .transpose()?;
        Ok(Conv1d {
            name: name.to_string(),
            in_ch,
            out_ch,
            kernel,
            stride,
            pad: (kernel - 1) / 2,
            weight,
            bias,
        })
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let b = self.bias.map(|b| bound.var(b)).transpose()?;
        g.conv1d(x, bound.var(self.weight)?, b, self.stride, self.pad)
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel + if self.bias.is_some() { self.out_ch } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub name: String,
    pub channels: usize,
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

impl BatchNorm1d {
    pub fn build(pv: &mut ParameterVector, name: &str, channels: usize) -> Result<Self> {
        let gamma = pv.push(
            format!("{name}.gamma"),
            Tensor::filled(&[channels], 1.0),
            SegmentKind::Trainable,
        )?;
        let beta = pv.push(
            format!("{name}.beta"),
            Tensor::zeros(&[channels]),
            SegmentKind::Trainable,
        )?;
        let running_mean = pv.push(
            format!("{name}.running_mean"),
            Tensor::zeros(&[channels]),
            SegmentKind::Buffer,
        )?;
        let running_var = pv.push(
            format!("{name}.running_var"),
            Tensor::filled(&[channels], 1.0),
            SegmentKind::Buffer,
        )?;
        Ok(BatchNorm1d {
            name: name.to_string(),
            channels,
            gamma,
            beta,
            running_mean,
            running_var,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        pv: &mut ParameterVector,
        bound: &Bound,
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let (gamma, beta) = (bound.var(self.gamma)?, bound.var(self.beta)?);
        match mode {
            BnMode::Eval => {
                let stats = BnStats::Running {
                    mean: pv.segment(self.running_mean).tensor.data(),
                    var: pv.segment(self.running_var).tensor.data(),
                };
                Ok(g.batch_norm(x, gamma, beta, stats, BN_EPS)?.0)
            }
            BnMode::Train { update_stats } => {
                let (y, moments) = g.batch_norm(x, gamma, beta, BnStats::Batch, BN_EPS)?;
                if let (true, Some(m)) = (update_stats, moments) {
                    let unbias = m.count as f64 / (m.count as f64 - 1.0);
                    let rm = pv.segment_mut(self.running_mean).tensor.data_mut();
                    for (r, v) in rm.iter_mut().zip(&m.mean) {
                        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
                    }
                    let rv = pv.segment_mut(self.running_var).tensor.data_mut();
                    for (r, v) in rv.iter_mut().zip(&m.var) {
                        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
                    }
                }
                Ok(y)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    weight: usize,
    bias: Option<usize>,
}

impl Dense {
    /// Kaiming-uniform with linear gain.
    pub fn build(
        pv: &mut ParameterVector,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        seed: u64,
        ns: &str,
    ) -> Result<Self> {
        let w = uniform_init(
            seed,
            &format!("{ns}/{name}.weight"),
            &[out_features, in_features],
            (3.0 / in_features as f64).sqrt(),
        );
        let weight = pv.push(format!("{name}.weight"), w, SegmentKind::Trainable)?;
        let bias = bias
            .then(|| {
                pv.push(
                    format!("{name}.bias"),
                    Tensor::zeros(&[out_features]),
                    SegmentKind::Trainable,
                )
            })
            .transpose()?;
        Ok(Dense {
            name: name.to_string(),
            in_features,
            out_features,
            weight,
            bias,
        })
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let b = self.bias.map(|b| bound.var(b)).transpose()?;
        g.dense(x, bound.var(self.weight)?, b)
    }

    pub fn param_count(&self) -> usize {
        self.out_features * self.in_features
            + if self.bias.is_some() {
                self.out_features
            } else {
                0
            }
    }
}

/// `relu(bn_b(conv_b(relu(bn_a(conv_a(x))))) + shortcut(x))`, with a 1x1
/// conv + BN shortcut whenever the shape changes.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub name: String,
    conv_a: Conv1d,
    bn_a: BatchNorm1d,
    conv_b: Conv1d,
    bn_b: BatchNorm1d,
    shortcut: Option<(Conv1d, BatchNorm1d)>,
}

impl ResidualBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        pv: &mut ParameterVector,
        name: &str,
        in_ch: usize,
        mid_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        seed: u64,
        ns: &str,
    ) -> Result<Self> {
        let conv_a = Conv1d::build(
            pv,
            &format!("{name}.conv_a"),
            in_ch,
            mid_ch,
            kernel,
            stride,
            false,
            seed,
            ns,
        )?;
        let bn_a = BatchNorm1d::build(pv, &format!("{name}.bn_a"), mid_ch)?;
        let conv_b = Conv1d::build(
            pv,
            &format!("{name}.conv_b"),
            mid_ch,
            out_ch,
            kernel,
            1,
            false,
            seed,
            ns,
        )?;
        let bn_b = BatchNorm1d::build(pv, &format!("{name}.bn_b"), out_ch)?;
        let shortcut = if in_ch != out_ch || stride != 1 {
            let conv = Conv1d::build(
                pv,
                &format!("{name}.shortcut"),
                in_ch,
                out_ch,
                1,
                stride,
                false,
                seed,
                ns,
            )?;
            let bn = BatchNorm1d::build(pv, &format!("{name}.bn_shortcut"), out_ch)?;
            Some((conv, bn))
        } else {
            None
        };
        Ok(ResidualBlock {
            name: name.to_string(),
            conv_a,
            bn_a,
            conv_b,
            bn_b,
            shortcut,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        pv: &mut ParameterVector,
        bound: &Bound,
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let h = self.conv_a.forward(g, bound, x)?;
        let h = self.bn_a.forward(g, pv, bound, h, mode)?;
        let h = g.relu(h)?;
        let h = self.conv_b.forward(g, bound, h)?;
        let h = self.bn_b.forward(g, pv, bound, h, mode)?;
        let s = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(g, bound, x)?;
                bn.forward(g, pv, bound, s, mode)?
            }
            None => x,
        };
        let sum = g.add(h, s)?;
        g.relu(sum)
    }

    fn layers(&self) -> Vec<(&Conv1d, &BatchNorm1d)> {
        let mut v = vec![(&self.conv_a, &self.bn_a), (&self.conv_b, &self.bn_b)];
        if let Some((c, b)) = &self.shortcut {
            v.push((c, b));
        }
        v
    }

    pub fn out_channels(&self) -> usize {
        self.conv_b.out_ch
    }
}

#[derive(Debug, Clone)]
pub enum Stage {
    ConvBnRelu(Conv1d, BatchNorm1d),
    Residual(ResidualBlock),
    /// Global average pool over time, `[B, C, T] -> [B, C]`.
    Pool,
    Dense(Dense),
}

/// One row of a printable layer table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRow {
    pub name: String,
    pub kind: String,
    pub weight_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

/// A chain of stages sharing one parameter vector. Components are the unit
/// of freezing and of parameter grouping.
#[derive(Debug, Clone)]
pub struct Component {
    pub name: String,
    pub params: ParameterVector,
    stages: Vec<Stage>,
}

impl Component {
    pub fn new(name: impl Into<String>, params: ParameterVector, stages: Vec<Stage>) -> Self {
        Component {
            name: name.into(),
            params,
            stages,
        }
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Binds the parameters (differentiable iff `requires_grad`) and runs every stage.
    pub fn forward(
        &mut self,
        g: &mut Graph,
        x: Var,
        mode: BnMode,
        requires_grad: bool,
    ) -> Result<(Var, Bound)> {
        let bound = self.params.bind(g, requires_grad)?;
        let mut h = x;
        for stage in &self.stages {
            h = match stage {
                Stage::ConvBnRelu(conv, bn) => {
                    let c = conv.forward(g, &bound, h)?;
                    let n = bn.forward(g, &mut self.params, &bound, c, mode)?;
                    g.relu(n)?
                }
                Stage::Residual(block) => block.forward(g, &mut self.params, &bound, h, mode)?,
                Stage::Pool => g.global_avg_pool(h)?,
                Stage::Dense(d) => d.forward(g, &bound, h)?,
            };
        }
        Ok((h, bound))
    }

    /// Exact trainable parameter count (running moments excluded).
    pub fn count_parameters(&self) -> usize {
        self.params.trainable_count()
    }

    /// Layer table for an input of `channels x frames`.
    pub fn describe(&self, channels: usize, frames: usize) -> (Vec<LayerRow>, usize, usize) {
        let mut rows = Vec::new();
        let (mut c, mut t) = (channels, frames);
        let conv_row = |conv: &Conv1d, bn: &BatchNorm1d, t: usize, rows: &mut Vec<LayerRow>| {
            let out_t = conv.out_len(t);
            rows.push(LayerRow {
                name: conv.name.clone(),
                kind: "conv1d".into(),
                weight_shape: vec![conv.out_ch, conv.in_ch, conv.kernel],
                output_shape: vec![conv.out_ch, out_t],
                params: conv.param_count(),
            });
            rows.push(LayerRow {
                name: bn.name.clone(),
                kind: "batch_norm".into(),
                weight_shape: vec![bn.channels],
                output_shape: vec![bn.channels, out_t],
                params: bn.param_count(),
            });
            out_t
        };
        for stage in &self.stages {
            match stage {
                Stage::ConvBnRelu(conv, bn) => {
                    t = conv_row(conv, bn, t, &mut rows);
                    c = conv.out_ch;
                }
                Stage::Residual(block) => {
                    let t_in = t;
                    for (i, (conv, bn)) in block.layers().into_iter().enumerate() {
                        let src = if i == 1 { t } else { t_in };
                        let out = conv_row(conv, bn, src, &mut rows);
                        if i < 2 {
                            t = out;
                        }
                    }
                    c = block.out_channels();
                }
                Stage::Pool => {
                    rows.push(LayerRow {
                        name: "pool".into(),
                        kind: "global_avg_pool".into(),
                        weight_shape: vec![],
                        output_shape: vec![c],
                        params: 0,
                    });
                    t = 1;
                }
                Stage::Dense(d) => {
                    rows.push(LayerRow {
                        name: d.name.clone(),
                        kind: "dense".into(),
                        weight_shape: vec![d.out_features, d.in_features],
                        output_shape: vec![d.out_features],
                        params: d.param_count(),
                    });
                    c = d.out_features;
                }
            }
        }
        (rows, c, t)
    }
}
