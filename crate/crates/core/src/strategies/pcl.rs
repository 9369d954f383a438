use super::{added_component_params, Strategy};
use crate::error::Result;
use crate::models::{Layout, Network, ProgressiveNet, ScalingConfig, TcResNet8Spec};

pub(crate) fn pcl_label(fixed: bool, freeze_shared: bool) -> String {
    let mut s = String::from(if fixed { "PCL(fix)" } else { "PCL" });
    if freeze_shared {
        s.push_str("+frozen-encoder");
    }
    s
}

/// Progressive continual learning: a shared encoder plus one sub-network
/// per task, sized by the keyword-aware width multiplier and frozen once
/// its task ends.
#[derive(Debug, Clone)]
pub struct Pcl {
    pub scaling: ScalingConfig,
    pub fixed: bool,
    pub freeze_shared: bool,
}

impl Pcl {
    pub fn new(scaling: ScalingConfig, fixed: bool, freeze_shared: bool) -> Self {
        Pcl {
            scaling,
            fixed,
            freeze_shared,
        }
    }
}

impl Strategy for Pcl {
    fn name(&self) -> &'static str {
        "pcl"
    }

    fn label(&self) -> String {
        pcl_label(self.fixed, self.freeze_shared)
    }

    fn layout(&self) -> Layout {
        Layout::Progressive
    }

    fn build_network(&self, spec: &TcResNet8Spec, seed: u64) -> Result<Box<dyn Network>> {
        Ok(Box::new(ProgressiveNet::new(
            spec,
            seed,
            self.scaling.clone(),
            self.fixed,
            self.freeze_shared,
        )?))
    }

    fn extra_params(&self, net: &dyn Network) -> usize {
        added_component_params(net)
    }

    fn state_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mu": self.scaling.mu,
            "c0": self.scaling.c0,
            "fixed": self.fixed,
            "freeze_shared": self.freeze_shared,
        })
    }
}
