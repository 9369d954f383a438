use serde::{Deserialize, Serialize};

use super::layers::{
    BatchNorm1d, BnMode, Component, Conv1d, Dense, LayerRow, ResidualBlock, Stage,
};
use crate::autodiff::{Bound, Graph, ParameterVector, SegmentKind, Var};
use crate::error::{Error, Result};

/// Temporal-convolution ResNet with three residual blocks.
///
/// The feature matrix is consumed as a 1-D sequence over frames with the
/// MFCC coefficients as input channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcResNet8Spec {
    /// Stem width followed by one width per residual block.
    pub channels: [usize; 4],
    pub n_classes: usize,
    pub n_mfcc: usize,
    pub n_frames: usize,
    pub first_kernel: usize,
    pub kernel: usize,
}

impl Default for TcResNet8Spec {
    fn default() -> Self {
        TcResNet8Spec {
            channels: [16, 24, 32, 48],
            n_classes: 15,
            n_mfcc: 40,
            n_frames: 98,
            first_kernel: 9,
            kernel: 3,
        }
    }
}

impl TcResNet8Spec {
    pub fn n_blocks(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidModel(format!(
                "n_classes must be >= 2, got {}",
                self.n_classes
            )));
        }
        if self.channels.contains(&0) || self.n_mfcc == 0 || self.n_frames == 0 {
            return Err(Error::InvalidModel(
                "channel and input dims must be positive".into(),
            ));
        }
        if self.first_kernel.is_multiple_of(2) || self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidModel("kernel sizes must be odd".into()));
        }
        Ok(())
    }

    /// Channels leaving the stem (first conv + first block); the width the
    /// progressive sub-networks consume.
    pub fn stem_channels(&self) -> usize {
        self.channels[1]
    }

    pub fn feature_channels(&self) -> usize {
        self.channels[3]
    }
}

/// First conv plus the first residual block.
pub fn build_stem(spec: &TcResNet8Spec, seed: u64, ns: &str) -> Result<Component> {
    spec.validate()?;
    let mut pv = ParameterVector::new();
    let c = spec.channels;
    let conv0 = Conv1d::build(
        &mut pv,
        "conv0",
        spec.n_mfcc,
        c[0],
        spec.first_kernel,
        1,
        false,
        seed,
        ns,
    )?;
    let bn0 = BatchNorm1d::build(&mut pv, "bn0", c[0])?;
    let block1 = ResidualBlock::build(
        &mut pv,
        "block1",
        c[0],
        c[1],
        c[1],
        spec.kernel,
        2,
        seed,
        ns,
    )?;
    Ok(Component::new(
        "stem",
        pv,
        vec![Stage::ConvBnRelu(conv0, bn0), Stage::Residual(block1)],
    ))
}

/// Remaining residual blocks and the global pool.
pub fn build_trunk(spec: &TcResNet8Spec, seed: u64, ns: &str) -> Result<Component> {
    spec.validate()?;
    let mut pv = ParameterVector::new();
    let c = spec.channels;
    let block2 = ResidualBlock::build(
        &mut pv,
        "block2",
        c[1],
        c[2],
        c[2],
        spec.kernel,
        2,
        seed,
        ns,
    )?;
    let block3 = ResidualBlock::build(
        &mut pv,
        "block3",
        c[2],
        c[3],
        c[3],
        spec.kernel,
        2,
        seed,
        ns,
    )?;
    Ok(Component::new(
        "trunk",
        pv,
        vec![
            Stage::Residual(block2),
            Stage::Residual(block3),
            Stage::Pool,
        ],
    ))
}

pub fn build_head(in_features: usize, n_classes: usize, seed: u64, ns: &str) -> Result<Component> {
    if n_classes == 0 {
        return Err(Error::InvalidModel(
            "a head needs at least one class".into(),
        ));
    }
    let mut pv = ParameterVector::new();
    let fc = Dense::build(&mut pv, "fc", in_features, n_classes, true, seed, ns)?;
    Ok(Component::new("head", pv, vec![Stage::Dense(fc)]))
}

/// A chain of components evaluated in order.
#[derive(Debug, Clone)]
pub struct Model {
    pub components: Vec<Component>,
    pub input_channels: usize,
    pub input_frames: usize,
}

impl Model {
    pub fn forward(
        &mut self,
        g: &mut Graph,
        x: Var,
        mode: BnMode,
        requires_grad: bool,
    ) -> Result<(Var, Vec<Bound>)> {
        let mut h = x;
        let mut bounds = Vec::with_capacity(self.components.len());
        for c in &mut self.components {
            let (out, b) = c.forward(g, h, mode, requires_grad)?;
            h = out;
            bounds.push(b);
        }
        Ok((h, bounds))
    }

    pub fn count_parameters(&self) -> usize {
        self.components
            .iter()
            .map(Component::count_parameters)
            .sum()
    }

    /// All component parameters merged into one vector, names prefixed by component.
    pub fn parameter_vector(&self) -> ParameterVector {
        let mut pv = ParameterVector::new();
        for c in &self.components {
            for s in c.params.segments() {
                pv.push(format!("{}/{}", c.name, s.name), s.tensor.clone(), s.kind)
                    .expect("component names are unique");
            }
        }
        pv
    }

    pub fn trainable_flat(&self) -> Vec<f64> {
        self.components
            .iter()
            .flat_map(|c| c.params.flatten_trainable())
            .collect()
    }

    pub fn set_trainable_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut off = 0;
        for c in &mut self.components {
            let n = c.params.trainable_count();
            let chunk = flat
                .get(off..off + n)
                .ok_or_else(|| Error::Shape("flat vector too short for model".into()))?;
            c.params.unflatten_trainable(chunk)?;
            off += n;
        }
        if off != flat.len() {
            return Err(Error::Shape("flat vector too long for model".into()));
        }
        Ok(())
    }

    /// Gradients of one sweep, concatenated over components.
    pub fn collect_grads(&self, g: &Graph, bounds: &[Bound]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.count_parameters());
        for (c, b) in self.components.iter().zip(bounds) {
            c.params.collect_grads(g, b, &mut out)?;
        }
        Ok(out)
    }

    pub fn describe(&self) -> Vec<LayerRow> {
        let (mut c, mut t) = (self.input_channels, self.input_frames);
        let mut rows = Vec::new();
        for comp in &self.components {
            let (r, c2, t2) = comp.describe(c, t);
            rows.extend(r.into_iter().map(|mut row| {
                row.name = format!("{}/{}", comp.name, row.name);
                row
            }));
            c = c2;
            t = t2;
        }
        rows
    }
}

/// Builds the full classifier: stem, trunk and a single head.
pub fn build_tcresnet8(spec: &TcResNet8Spec, seed: u64) -> Result<Model> {
    build_tcresnet8_in(spec, seed, "tcresnet8")
}

/// As [`build_tcresnet8`] with an explicit init namespace, so independent
/// models drawn from one run seed get independent weights.
pub fn build_tcresnet8_in(spec: &TcResNet8Spec, seed: u64, ns: &str) -> Result<Model> {
    spec.validate()?;
    Ok(Model {
        components: vec![
            build_stem(spec, seed, ns)?,
            build_trunk(spec, seed, ns)?,
            build_head(spec.feature_channels(), spec.n_classes, seed, ns)?,
        ],
        input_channels: spec.n_mfcc,
        input_frames: spec.n_frames,
    })
}

/// Number of running-statistic scalars (excluded from parameter counts).
pub fn buffer_count(pv: &ParameterVector) -> usize {
    pv.segments()
        .iter()
        .filter(|s| s.kind == SegmentKind::Buffer)
        .map(|s| s.tensor.len())
        .sum()
}
