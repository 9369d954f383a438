//! Keyword-spotting architectures: the TC-ResNet-8 testbed, progressive
//! sub-networks with keyword-aware width scaling, and the multi-task
//! layouts built from them.

mod layers;
mod network;
mod subnet;
mod tcresnet;

pub use layers::{
    BatchNorm1d, BnMode, Component, Conv1d, Dense, LayerRow, ResidualBlock, Stage, BN_EPS,
    BN_MOMENTUM,
};
pub use network::{
    load_network_parameters, network_parameters, ForwardMode, IsolatedNet, Layout, Network,
    ProgressiveNet, SharedNet, TaskLogits, Trace,
};
pub use subnet::{
    build_subnet, instantiate_subnet, scale_channels, subnet_spec, width_multiplier, ScalingConfig,
    SubNetSpec, SUBNET_BASE_CHANNELS,
};
pub use tcresnet::{
    buffer_count, build_head, build_stem, build_tcresnet8, build_tcresnet8_in, build_trunk, Model,
    TcResNet8Spec,
};

use crate::error::Result;

/// Exact trainable parameter count of a model (running moments excluded).
pub fn count_parameters(model: &Model) -> usize {
    model.count_parameters()
}

/// Describes either the full classifier or a progressive sub-network.
pub fn describe_tcresnet8(spec: &TcResNet8Spec, seed: u64) -> Result<Vec<LayerRow>> {
    Ok(build_tcresnet8(spec, seed)?.describe())
}

pub fn describe_subnet(spec: &SubNetSpec, input_frames: usize, seed: u64) -> Result<Vec<LayerRow>> {
    let net = build_subnet(spec, seed, "describe")?;
    Ok(net
        .describe(spec.in_channels, input_frames)
        .0
        .into_iter()
        .map(|mut r| {
            r.name = format!("subnet/{}", r.name);
            r
        })
        .collect())
}

/// Renders a layer table as aligned text.
pub fn format_layer_table(rows: &[LayerRow]) -> String {
    let mut out = format!(
        "{:<28} {:<16} {:<14} {:<10} {:>8}\n",
        "layer", "type", "weight", "output", "params"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<28} {:<16} {:<14} {:<10} {:>8}\n",
            r.name,
            r.kind,
            format!("{:?}", r.weight_shape),
            format!("{:?}", r.output_shape),
            r.params
        ));
    }
    out.push_str(&format!(
        "total trainable parameters: {}\n",
        rows.iter().map(|r| r.params).sum::<usize>()
    ));
    out
}
