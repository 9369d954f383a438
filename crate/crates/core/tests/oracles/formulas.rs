//! Closed-form and hand-computed examples: widths, parameter counts,
//! rehearsal mix sizes and the continual-learning metrics.

#![allow(dead_code)]

use kwscl_core::autodiff::ParameterVector;
use kwscl_core::metrics::{acc, acc_curve, acc_with, bwt, bwt_with, la, la_with, AccuracyMatrix};
use kwscl_core::models::{
    build_tcresnet8, count_parameters, instantiate_subnet, width_multiplier, Conv1d, Dense,
    ScalingConfig, TcResNet8Spec,
};
use kwscl_core::strategies::{nr_mix, nr_select};

pub fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k
}

pub fn bn(c: usize) -> usize {
    2 * c
}

pub fn dense(fan_in: usize, fan_out: usize) -> usize {
    fan_in * fan_out + fan_out
}

/// Two k-wide convs with BN, plus a 1x1 conv + BN shortcut (every block here changes shape).
pub fn block(cin: usize, mid: usize, cout: usize, k: usize) -> usize {
    conv(cin, mid, k) + bn(mid) + conv(mid, cout, k) + bn(cout) + conv(cin, cout, 1) + bn(cout)
}

pub fn tcresnet8_oracle(n_mfcc: usize, n_classes: usize) -> usize {
    let c = [16, 24, 32, 48];
    conv(n_mfcc, c[0], 9)
        + bn(c[0])
        + block(c[0], c[1], c[1], 3)
        + block(c[1], c[2], c[2], 3)
        + block(c[2], c[3], c[3], 3)
        + dense(c[3], n_classes)
}

pub fn subnet_oracle(in_ch: usize, c1: usize, c2: usize, n_classes: usize) -> usize {
    block(in_ch, c1, c2, 3) + dense(c2, n_classes)
}

pub fn trainable_segment_sum(pv: &ParameterVector) -> usize {
    pv.segments()
        .iter()
        .filter(|s| s.is_trainable())
        .map(|s| s.tensor.len())
        .sum()
}

pub fn cfg(mu: f64, c0: usize) -> ScalingConfig {
    ScalingConfig { mu, c0 }
}

pub fn closed_form_layer_examples() {
    let mut pv = ParameterVector::new();
    let d = Dense::build(&mut pv, "d", 10, 5, true, 0, "t").unwrap();
    assert_eq!(d.param_count(), 55);
    let c = Conv1d::build(&mut pv, "c", 4, 8, 3, 1, true, 0, "t").unwrap();
    assert_eq!(c.param_count(), 104);
    assert_eq!(trainable_segment_sum(&pv), 159);
}

pub fn default_tcresnet8_count() {
    let spec = TcResNet8Spec::default();
    let model = build_tcresnet8(&spec, 0).unwrap();
    let n0 = tcresnet8_oracle(40, 15);
    assert_eq!(n0, 29_615);
    assert_eq!(count_parameters(&model), n0);
    assert_eq!(trainable_segment_sum(&model.parameter_vector()), n0);
}

pub fn tcresnet8_count_tracks_classes_and_inputs() {
    for (n_mfcc, n_classes) in [(10, 2), (40, 3), (13, 30)] {
        let spec = TcResNet8Spec {
            n_mfcc,
            n_classes,
            ..TcResNet8Spec::default()
        };
        let model = build_tcresnet8(&spec, 1).unwrap();
        assert_eq!(
            count_parameters(&model),
            tcresnet8_oracle(n_mfcc, n_classes)
        );
    }
}

pub fn scaled_and_fixed_subnets() {
    let (spec, scaled) = instantiate_subnet(3, &cfg(1.0, 15), false, 24, 3, 0, "t").unwrap();
    assert_eq!(spec.scaled_channels, [3, 10]);
    assert_eq!(subnet_oracle(24, 3, 10, 3), 625);
    assert_eq!(scaled.count_parameters(), 625);
    assert_eq!(trainable_segment_sum(&scaled.params), 625);

    let (spec, net) = instantiate_subnet(3, &cfg(1.0, 15), true, 24, 3, 0, "t").unwrap();
    assert_eq!(spec.scaled_channels, [16, 48]);
    assert_eq!(subnet_oracle(24, 16, 48, 3), 4_979);
    assert_eq!(net.count_parameters(), 4_979);
    // The scaled increment is under a fifth of the fixed one at C_t/C_0 = 0.2.
    assert!(scaled.count_parameters() * 5 < net.count_parameters());
}

pub fn width_multiplier_examples() {
    assert_eq!(width_multiplier(3, &cfg(1.0, 15)).unwrap(), 0.2);
    assert_eq!(width_multiplier(15, &cfg(1.0, 15)).unwrap(), 1.0);
    assert_eq!(width_multiplier(3, &cfg(2.5, 15)).unwrap(), 0.5);
    assert!(width_multiplier(0, &cfg(1.0, 15)).is_err());
    assert!(width_multiplier(3, &cfg(0.0, 15)).is_err());
    assert!(width_multiplier(3, &cfg(1.0, 0)).is_err());
}

pub fn collapsed_widths_clamp_to_one() {
    let (spec, net) = instantiate_subnet(1, &cfg(1.0, 48), false, 24, 3, 0, "t").unwrap();
    assert_eq!(spec.scaled_channels, [1, 1]);
    assert!(spec.clamped);
    assert_eq!(net.count_parameters(), subnet_oracle(24, 1, 1, 1));
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

pub fn one_task_example() {
    let r = AccuracyMatrix::from_rows(&[vec![0.9], vec![0.8, 0.95]]).unwrap();
    assert!(close(acc(&r).unwrap(), 0.875));
    assert!(close(la(&r).unwrap(), 0.925));
    assert!(close(bwt(&r).unwrap(), -0.1));
}

pub fn three_task_hand_computation() {
    let r = AccuracyMatrix::from_rows(&[
        vec![0.90],
        vec![0.70, 0.80],
        vec![0.60, 0.75, 0.85],
        vec![0.50, 0.65, 0.80, 0.95],
    ])
    .unwrap();
    // Worked by hand: final row sum 2.9, diagonal sum 3.5, drops -0.4 -0.15 -0.05.
    assert!(close(acc(&r).unwrap(), 0.725));
    assert!(close(la(&r).unwrap(), 0.875));
    assert!(close(bwt(&r).unwrap(), -0.2));
    assert!(close(acc_with(&r, false).unwrap(), 0.8));
    assert!(close(la_with(&r, false).unwrap(), 2.6 / 3.0));
    assert!(close(bwt_with(&r, false).unwrap(), -0.1));
    let curve = acc_curve(&r).unwrap();
    let expected = [0.9, 0.75, 2.2 / 3.0, 0.725];
    assert!(curve.iter().zip(expected).all(|(a, b)| close(*a, b)));
}

pub fn constant_diagonal_has_zero_bwt() {
    let rows: Vec<Vec<f64>> = (0..5).map(|t| vec![0.97; t + 1]).collect();
    let r = AccuracyMatrix::from_rows(&rows).unwrap();
    assert_eq!(bwt(&r).unwrap(), 0.0);
    assert_eq!(bwt_with(&r, false).unwrap(), 0.0);
}

pub fn unpopulated_and_invalid_cells_are_errors() {
    let mut r = AccuracyMatrix::new(3);
    r.set(0, 0, 0.5).unwrap();
    assert!(acc(&r).is_err());
    assert!(r.set(0, 1, 0.5).is_err(), "upper triangle");
    assert!(r.set(1, 0, 1.5).is_err(), "out of [0, 1]");
    assert!(r.set(0, 0, 0.6).is_err(), "cells are written once");
    assert!(AccuracyMatrix::from_rows(&[vec![0.5, 0.5]]).is_err());
}

pub fn nr_examples() {
    let d1: Vec<u32> = (0..100).collect();
    let d2: Vec<u32> = (100..180).collect();
    assert_eq!(nr_mix(&[d1.clone()], &d2, 0.5, 1, 1).unwrap().len(), 130);
    let d1b: Vec<u32> = (200..260).collect();
    assert_eq!(nr_mix(&[d1, d1b], &d2, 0.75, 1, 2).unwrap().len(), 200);
    let tenth: Vec<u32> = (0..30).collect();
    assert_eq!(nr_select(&tenth, 0.1, 1, 0).unwrap().len(), 3);
    assert!(nr_mix(&[vec![1u32]], &[2], 1.5, 1, 1).is_err());
}

pub const CHECKS: &[(&str, fn())] = &[
    ("closed_form_layer_examples", closed_form_layer_examples),
    ("default_tcresnet8_count", default_tcresnet8_count),
    (
        "tcresnet8_count_tracks_classes_and_inputs",
        tcresnet8_count_tracks_classes_and_inputs,
    ),
    ("scaled_and_fixed_subnets", scaled_and_fixed_subnets),
    ("width_multiplier_examples", width_multiplier_examples),
    (
        "collapsed_widths_clamp_to_one",
        collapsed_widths_clamp_to_one,
    ),
    ("one_task_example", one_task_example),
    ("three_task_hand_computation", three_task_hand_computation),
    (
        "constant_diagonal_has_zero_bwt",
        constant_diagonal_has_zero_bwt,
    ),
    (
        "unpopulated_and_invalid_cells_are_errors",
        unpopulated_and_invalid_cells_are_errors,
    ),
    ("nr_examples", nr_examples),
];
