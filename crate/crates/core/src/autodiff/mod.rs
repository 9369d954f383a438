//! Minimal reverse-mode automatic differentiation and SGD.

mod checkpoint;
mod graph;
mod params;
mod sgd;
mod tensor;

pub use checkpoint::{checkpoint_bytes, read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use graph::{BatchMoments, BnStats, Graph, Var};
pub use params::{Bound, ParameterVector, Segment, SegmentKind};
pub use sgd::{Sgd, SgdConfig};
pub use tensor::Tensor;
