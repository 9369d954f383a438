use serde::{Deserialize, Serialize};

use super::layers::{Component, Dense, ResidualBlock, Stage};
use crate::autodiff::ParameterVector;
use crate::error::{Error, Result};

/// Base widths of a progressive sub-network before keyword-aware scaling.
pub const SUBNET_BASE_CHANNELS: [usize; 2] = [16, 48];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    /// Width multiplier scale `mu`, must be > 0.
    pub mu: f64,
    /// Keyword count of the pretraining task.
    pub c0: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig { mu: 1.0, c0: 15 }
    }
}

/// `alpha = mu * C_t / C_0`.
pub fn width_multiplier(c_t: usize, cfg: &ScalingConfig) -> Result<f64> {
    if c_t == 0 || cfg.c0 == 0 {
        return Err(Error::InvalidArgument(format!(
            "keyword counts must be >= 1 (C_t = {c_t}, C_0 = {})",
            cfg.c0
        )));
    }
    if !(cfg.mu > 0.0 && cfg.mu.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "mu must be > 0, got {}",
            cfg.mu
        )));
    }
    Ok(cfg.mu * c_t as f64 / cfg.c0 as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubNetSpec {
    pub base_channels: [usize; 2],
    pub alpha: f64,
    pub n_classes: usize,
    pub scaled_channels: [usize; 2],
    pub in_channels: usize,
    pub kernel: usize,
    /// Set when a scaled width rounded to zero and was clamped to one.
    pub clamped: bool,
}

/// Round-half-up, clamped to at least one channel. Returns whether it clamped.
pub fn scale_channels(base: usize, alpha: f64) -> (usize, bool) {
    let scaled = (alpha * base as f64 + 0.5).floor() as usize;
    if scaled == 0 {
        (1, true)
    } else {
        (scaled, false)
    }
}

/// Sizes the sub-network for a task with `n_classes` keywords. The fixed
/// variant keeps the base widths regardless of the keyword count.
pub fn subnet_spec(
    n_classes: usize,
    cfg: &ScalingConfig,
    fixed: bool,
    in_channels: usize,
    kernel: usize,
) -> Result<SubNetSpec> {
    let alpha = width_multiplier(n_classes, cfg)?;
    let (scaled_channels, clamped) = if fixed {
        (SUBNET_BASE_CHANNELS, false)
    } else {
        let (a, ca) = scale_channels(SUBNET_BASE_CHANNELS[0], alpha);
        let (b, cb) = scale_channels(SUBNET_BASE_CHANNELS[1], alpha);
        ([a, b], ca || cb)
    };
    if clamped {
        log::warn!(
            "width multiplier {alpha:.4} collapses a sub-network layer; clamped to {scaled_channels:?}"
        );
    }
    Ok(SubNetSpec {
        base_channels: SUBNET_BASE_CHANNELS,
        alpha: if fixed { 1.0 } else { alpha },
        n_classes,
        scaled_channels,
        in_channels,
        kernel,
        clamped,
    })
}

/// One residual block (two temporal convs plus a 1x1 shortcut), a global
/// pool and a single classification head.
pub fn build_subnet(spec: &SubNetSpec, seed: u64, ns: &str) -> Result<Component> {
    let [c1, c2] = spec.scaled_channels;
    let mut pv = ParameterVector::new();
    let block = ResidualBlock::build(
        &mut pv,
        "block",
        spec.in_channels,
        c1,
        c2,
        spec.kernel,
        2,
        seed,
        ns,
    )?;
    let fc = Dense::build(&mut pv, "fc", c2, spec.n_classes, true, seed, ns)?;
    Ok(Component::new(
        "subnet",
        pv,
        vec![Stage::Residual(block), Stage::Pool, Stage::Dense(fc)],
    ))
}

/// Sizes and builds a task's sub-network.
pub fn instantiate_subnet(
    n_classes: usize,
    cfg: &ScalingConfig,
    fixed: bool,
    in_channels: usize,
    kernel: usize,
    seed: u64,
    ns: &str,
) -> Result<(SubNetSpec, Component)> {
    let spec = subnet_spec(n_classes, cfg, fixed, in_channels, kernel)?;
    let net = build_subnet(&spec, seed, ns)?;
    Ok((spec, net))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mu: f64, c0: usize) -> ScalingConfig {
        ScalingConfig { mu, c0 }
    }

    #[test]
    fn width_multiplier_examples() {
        assert_eq!(width_multiplier(3, &cfg(1.0, 15)).unwrap(), 0.2);
        assert_eq!(width_multiplier(15, &cfg(1.0, 15)).unwrap(), 1.0);
        assert_eq!(width_multiplier(3, &cfg(2.5, 15)).unwrap(), 0.5);
        assert!(width_multiplier(0, &cfg(1.0, 15)).is_err());
        assert!(width_multiplier(3, &cfg(1.0, 0)).is_err());
        assert!(width_multiplier(3, &cfg(0.0, 15)).is_err());
        assert!(width_multiplier(3, &cfg(-1.0, 15)).is_err());
    }

    #[test]
    fn channel_scaling_examples() {
        let s = subnet_spec(3, &cfg(1.0, 15), false, 24, 3).unwrap();
        assert_eq!(s.scaled_channels, [3, 10]);
        assert!(!s.clamped);
        for c_t in [1, 3, 7, 30] {
            let s = subnet_spec(c_t, &cfg(1.0, 15), true, 24, 3).unwrap();
            assert_eq!(s.scaled_channels, [16, 48]);
        }
        let s = subnet_spec(1, &cfg(1.0, 48), false, 24, 3).unwrap();
        assert_eq!(s.scaled_channels, [1, 1]);
        assert!(s.clamped);
    }

    #[test]
    fn round_half_up() {
        assert_eq!(scale_channels(16, 0.5 / 16.0).0, 1);
        assert_eq!(scale_channels(48, 0.25).0, 12);
        assert_eq!(scale_channels(10, 0.25).0, 3);
    }

    #[test]
    fn head_matches_keyword_count() {
        for c_t in 1..6 {
            let (spec, net) = instantiate_subnet(c_t, &cfg(1.0, 15), false, 24, 3, 1, "t").unwrap();
            let (rows, out, _) = net.describe(24, 49);
            assert_eq!(out, c_t);
            assert_eq!(spec.n_classes, c_t);
            assert_eq!(
                rows.iter().map(|r| r.params).sum::<usize>(),
                net.count_parameters()
            );
        }
    }
}
