//! Deterministic inputs shared by the benchmarks.

use std::sync::Arc;

use kwscl_core::autodiff::Tensor;
use kwscl_core::data::Sample;
use kwscl_core::seed::rng_for;
use rand::Rng;

pub fn random_vec(seed: u64, purpose: &str, n: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, purpose);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn random_tensor(seed: u64, purpose: &str, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_vec(seed, purpose, n)).expect("shape matches data")
}

/// One second of a 1 kHz tone with a little noise, at 16 kHz.
pub fn tone_clip() -> Vec<f64> {
    let noise = random_vec(0, "bench/tone", 16_000);
    (0..16_000)
        .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16_000.0).sin() + 0.01 * noise[n])
        .collect()
}

/// A labelled batch of MFCC-shaped feature maps.
pub fn feature_batch(n: usize, n_mfcc: usize, n_frames: usize, n_classes: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample {
            task: 0,
            label: i % n_classes,
            features: Arc::new(random_tensor(i as u64, "bench/features", &[n_mfcc, n_frames])),
        })
        .collect()
}
