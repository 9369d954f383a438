use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    /// Learned weight.
    Trainable,
    /// State that is carried with the model but never differentiated
    /// (batch-norm running moments).
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub tensor: Tensor,
    pub kind: SegmentKind,
}

impl Segment {
    pub fn is_trainable(&self) -> bool {
        self.kind == SegmentKind::Trainable
    }
}

/// Ordered, named parameter segments of one model component.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    segments: Vec<Segment>,
}

/// Graph handles of the segments bound into one forward pass, aligned with
/// the segment list (`None` for buffers).
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, segment: usize) -> Result<Var> {
        self.vars
            .get(segment)
            .copied()
            .flatten()
            .ok_or_else(|| Error::InvalidArgument(format!("segment {segment} is not bound")))
    }
}

impl ParameterVector {
    pub fn new() -> Self {
        ParameterVector::default()
    }

    /// Appends a segment and returns its index.
    pub fn push(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
        kind: SegmentKind,
    ) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate segment `{name}`"
            )));
        }
        let tensor = tensor.with_requires_grad(kind == SegmentKind::Trainable);
        self.segments.push(Segment { name, tensor, kind });
        Ok(self.segments.len() - 1)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segments_mut(&mut self) -> &mut [Segment] {
        &mut self.segments
    }

    pub fn segment(&self, i: usize) -> &Segment {
        &self.segments[i]
    }

    pub fn segment_mut(&mut self, i: usize) -> &mut Segment {
        &mut self.segments[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_count(&self) -> usize {
        self.segments.iter().map(|s| s.tensor.len()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable().map(|s| s.tensor.len()).sum()
    }

    fn trainable(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.is_trainable())
    }

    /// Every segment, buffers included, concatenated in order.
    pub fn flatten(&self) -> Vec<f64> {
        self.segments
            .iter()
            .flat_map(|s| s.tensor.data().iter().copied())
            .collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        Self::scatter(self.segments.iter_mut(), flat)
    }

    pub fn flatten_trainable(&self) -> Vec<f64> {
        self.trainable()
            .flat_map(|s| s.tensor.data().iter().copied())
            .collect()
    }

    pub fn unflatten_trainable(&mut self, flat: &[f64]) -> Result<()> {
        Self::scatter(self.segments.iter_mut().filter(|s| s.is_trainable()), flat)
    }

    fn scatter<'a>(segments: impl Iterator<Item = &'a mut Segment>, flat: &[f64]) -> Result<()> {
        let segments: Vec<_> = segments.collect();
        let need: usize = segments.iter().map(|s| s.tensor.len()).sum();
        if need != flat.len() {
            return Err(Error::Shape(format!(
                "flat vector of length {} for {need} parameters",
                flat.len()
            )));
        }
        let mut off = 0;
        for s in segments {
            let n = s.tensor.len();
            s.tensor.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Gradients of the trainable segments, concatenated.
    pub fn grads_flat(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.trainable_count());
        for s in self.trainable() {
            let g = s
                .tensor
                .grad()
                .ok_or_else(|| Error::MissingGrad(s.name.clone()))?;
            out.extend_from_slice(g);
        }
        Ok(out)
    }

    pub fn zero_grad(&mut self) {
        for s in self.segments.iter_mut().filter(|s| s.is_trainable()) {
            s.tensor.zero_grad();
        }
    }

    pub fn clear_grads(&mut self) {
        for s in &mut self.segments {
            s.tensor.clear_grad();
        }
    }

    /// Registers the trainable segments as graph leaves.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Result<Bound> {
        let vars = self
            .segments
            .iter()
            .map(|s| {
                if !s.is_trainable() {
                    return Ok(None);
                }
                let mut t = s.tensor.clone();
                t.clear_grad();
                t.set_requires_grad(requires_grad);
                g.leaf(&t).map(Some)
            })
            .collect::<Result<_>>()?;
        Ok(Bound { vars })
    }

    /// Adds the leaf gradients of a finished backward sweep into the segments.
    /// Bound segments the sweep never reached receive zeros.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &Bound) -> Result<()> {
        for (s, v) in self.segments.iter_mut().zip(&bound.vars) {
            if let Some(v) = v {
                match g.grad(*v)? {
                    Some(grad) => s.tensor.accumulate_grad(grad)?,
                    None => {
                        if s.tensor.grad().is_none() {
                            s.tensor.zero_grad();
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Leaf gradients of a sweep as one flat vector over trainable segments,
    /// without touching the stored gradient slots.
    pub fn collect_grads(&self, g: &Graph, bound: &Bound, out: &mut Vec<f64>) -> Result<()> {
        for (s, v) in self.segments.iter().zip(&bound.vars) {
            if !s.is_trainable() {
                continue;
            }
            match v.map(|v| g.grad(v)).transpose()?.flatten() {
                Some(grad) => out.extend_from_slice(grad),
                None => out.extend(std::iter::repeat_n(0.0, s.tensor.len())),
            }
        }
        Ok(())
    }
}
