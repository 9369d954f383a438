use super::{added_component_params, Strategy};
use crate::error::Result;
use crate::models::{IsolatedNet, Layout, Network, TcResNet8Spec};

/// Plain sequential training: the lower bound.
#[derive(Debug, Clone, Copy, Default)]
pub struct FineTune;

impl Strategy for FineTune {
    fn name(&self) -> &'static str {
        "fine-tune"
    }
}

/// A fresh model per task: the upper bound, paid for in parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct StandAlone;

impl Strategy for StandAlone {
    fn name(&self) -> &'static str {
        "stand-alone"
    }

    fn layout(&self) -> Layout {
        Layout::Isolated
    }

    fn build_network(&self, spec: &TcResNet8Spec, seed: u64) -> Result<Box<dyn Network>> {
        Ok(Box::new(IsolatedNet::new(spec, seed)?))
    }

    fn extra_params(&self, net: &dyn Network) -> usize {
        added_component_params(net)
    }
}
