//! Reverse-mode gradients against central finite differences. Each check
//! panics on the first disagreement.

#![allow(dead_code)]

use std::sync::Arc;

use kwscl_core::autodiff::{BnStats, Graph, Tensor, Var};
use kwscl_core::data::{batch_gradient, forward_loss, Sample};
use kwscl_core::models::{ForwardMode, Network, SharedNet, TcResNet8Spec};
use kwscl_core::seed::rng_for;
use kwscl_core::strategies::{ewc_penalty, ewc_penalty_grad, Si, Strategy};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const FIXTURES: usize = 24;
const H: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero so ReLU kinks stay outside the FD stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Builds `build(inputs)`, reduces it to a scalar through a fixed random
/// projection and returns the loss value.
fn evaluate<F>(
    g: &mut Graph,
    inputs: &[Tensor],
    proj_seed: u64,
    build: &F,
    with_grad: bool,
) -> (f64, Vec<Var>, Var)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    g.clear();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(&t.clone().with_requires_grad(with_grad)).unwrap())
        .collect();
    let y = build(g, &vars);
    let shape = g.value(y).unwrap().shape().to_vec();
    let loss = if shape.iter().product::<usize>() == 1 && shape.len() <= 1 {
        y
    } else {
        let mut rng = rng_for(proj_seed, "projection");
        let r = g.constant(random(&mut rng, &shape)).unwrap();
        let m = g.mul(y, r).unwrap();
        g.sum(m).unwrap()
    };
    (g.value(loss).unwrap().item(), vars, loss)
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-6 + 1e-5 * analytic.abs().max(numeric.abs())
}

fn gradcheck<F>(label: &str, inputs: Vec<Tensor>, proj_seed: u64, build: F)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let (_, vars, loss) = evaluate(&mut g, &inputs, proj_seed, &build, true);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .unwrap()
                .map_or(vec![0.0; t.len()], <[f64]>::to_vec)
        })
        .collect();

    for (which, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[which].data_mut()[i] += H;
            let mut minus = inputs.clone();
            minus[which].data_mut()[i] -= H;
            let fp = evaluate(&mut g, &plus, proj_seed, &build, false).0;
            let fm = evaluate(&mut g, &minus, proj_seed, &build, false).0;
            let numeric = (fp - fm) / (2.0 * H);
            let a = analytic[which][i];
            assert!(
                close(a, numeric),
                "{label}: input {which} element {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

pub fn conv1d_matches_finite_differences() {
    let mut rng = rng_for(1, "gradcheck/conv1d");
    for f in 0..FIXTURES {
        let batch = rng.gen_range(1..3);
        let cin = rng.gen_range(1..4);
        let cout = rng.gen_range(1..4);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let len = rng.gen_range(k..k + 6);
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..=k / 2);
        let bias = f % 2 == 0;
        let mut inputs = vec![
            random(&mut rng, &[batch, cin, len]),
            random(&mut rng, &[cout, cin, k]),
        ];
        if bias {
            inputs.push(random(&mut rng, &[cout]));
        }
        gradcheck("conv1d", inputs, f as u64, |g, v| {
            g.conv1d(v[0], v[1], v.get(2).copied(), stride, pad)
                .unwrap()
        });
    }
}

pub fn batch_norm_batch_statistics_match_finite_differences() {
    let mut rng = rng_for(2, "gradcheck/bn");
    for f in 0..FIXTURES {
        let batch = rng.gen_range(2..4);
        let ch = rng.gen_range(1..4);
        let shape = if f % 3 == 0 {
            vec![batch, ch]
        } else {
            vec![batch, ch, rng.gen_range(2..5)]
        };
        let inputs = vec![
            random(&mut rng, &shape),
            random(&mut rng, &[ch]),
            random(&mut rng, &[ch]),
        ];
        gradcheck("batch_norm/batch", inputs, f as u64, |g, v| {
            g.batch_norm(v[0], v[1], v[2], BnStats::Batch, 1e-5)
                .unwrap()
                .0
        });
    }
}

pub fn batch_norm_running_statistics_match_finite_differences() {
    let mut rng = rng_for(3, "gradcheck/bn-running");
    for f in 0..FIXTURES {
        let ch = rng.gen_range(1..4);
        let shape = [rng.gen_range(1..3), ch, rng.gen_range(1..4)];
        let mean: Vec<f64> = (0..ch).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let var: Vec<f64> = (0..ch).map(|_| rng.gen_range(0.2..2.0)).collect();
        let inputs = vec![
            random(&mut rng, &shape),
            random(&mut rng, &[ch]),
            random(&mut rng, &[ch]),
        ];
        gradcheck("batch_norm/running", inputs, f as u64, |g, v| {
            let stats = BnStats::Running {
                mean: &mean,
                var: &var,
            };
            g.batch_norm(v[0], v[1], v[2], stats, 1e-5).unwrap().0
        });
    }
}

pub fn relu_matches_finite_differences() {
    let mut rng = rng_for(4, "gradcheck/relu");
    for f in 0..FIXTURES {
        let shape = [
            rng.gen_range(1..3),
            rng.gen_range(1..4),
            rng.gen_range(1..5),
        ];
        gradcheck(
            "relu",
            vec![away_from_zero(&mut rng, &shape)],
            f as u64,
            |g, v| g.relu(v[0]).unwrap(),
        );
    }
}

pub fn elementwise_ops_match_finite_differences() {
    let mut rng = rng_for(5, "gradcheck/elementwise");
    for f in 0..FIXTURES {
        let shape = [rng.gen_range(1..3), rng.gen_range(1..5)];
        let c = rng.gen_range(-2.0..2.0);
        let inputs = vec![random(&mut rng, &shape), random(&mut rng, &shape)];
        gradcheck("add", inputs.clone(), f as u64, |g, v| {
            g.add(v[0], v[1]).unwrap()
        });
        gradcheck("mul", inputs.clone(), f as u64, |g, v| {
            g.mul(v[0], v[1]).unwrap()
        });
        gradcheck("scale", inputs[..1].to_vec(), f as u64, |g, v| {
            g.scale(v[0], c).unwrap()
        });
        gradcheck("sum", inputs[..1].to_vec(), f as u64, |g, v| {
            g.sum(v[0]).unwrap()
        });
    }
}

pub fn pooling_dense_and_gather_match_finite_differences() {
    let mut rng = rng_for(6, "gradcheck/dense");
    for f in 0..FIXTURES {
        let batch = rng.gen_range(1..4);
        let ch = rng.gen_range(1..4);
        let len = rng.gen_range(1..5);
        gradcheck(
            "global_avg_pool",
            vec![random(&mut rng, &[batch, ch, len])],
            f as u64,
            |g, v| g.global_avg_pool(v[0]).unwrap(),
        );

        let out = rng.gen_range(1..4);
        let mut inputs = vec![random(&mut rng, &[batch, ch]), random(&mut rng, &[out, ch])];
        if f % 2 == 0 {
            inputs.push(random(&mut rng, &[out]));
        }
        gradcheck("dense", inputs, f as u64, |g, v| {
            g.dense(v[0], v[1], v.get(2).copied()).unwrap()
        });

        // Repeated rows must accumulate.
        let rows: Vec<usize> = (0..rng.gen_range(1..5))
            .map(|_| rng.gen_range(0..batch))
            .collect();
        gradcheck(
            "gather_rows",
            vec![random(&mut rng, &[batch, ch])],
            f as u64,
            |g, v| g.gather_rows(v[0], &rows).unwrap(),
        );
    }
}

pub fn softmax_cross_entropy_matches_finite_differences() {
    let mut rng = rng_for(7, "gradcheck/ce");
    for f in 0..FIXTURES {
        let batch = rng.gen_range(1..5);
        let classes = rng.gen_range(2..6);
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
        let mut logits = random(&mut rng, &[batch, classes]);
        logits.data_mut().iter_mut().for_each(|x| *x *= 3.0);
        gradcheck("softmax_cross_entropy", vec![logits], f as u64, |g, v| {
            g.softmax_cross_entropy(v[0], &labels).unwrap()
        });
    }
}

pub fn composite_residual_chain_matches_finite_differences() {
    // conv -> bn -> relu -> conv, plus skip, pooled into a dense classifier.
    let mut rng = rng_for(8, "gradcheck/composite");
    for f in 0..FIXTURES {
        let (b, c, t, k) = (2, 2, 6, 3);
        let inputs = vec![
            random(&mut rng, &[b, c, t]),
            random(&mut rng, &[c, c, k]),
            random(&mut rng, &[c]),
            random(&mut rng, &[c]),
            random(&mut rng, &[c, c, k]),
            random(&mut rng, &[3, c]),
        ];
        let labels = [f % 3, (f + 1) % 3];
        gradcheck("composite", inputs, f as u64, |g, v| {
            let h = g.conv1d(v[0], v[1], None, 1, 1).unwrap();
            let h = g.batch_norm(h, v[2], v[3], BnStats::Batch, 1e-5).unwrap().0;
            let h = g.relu(h).unwrap();
            let h = g.conv1d(h, v[4], None, 1, 1).unwrap();
            let h = g.add(h, v[0]).unwrap();
            let p = g.global_avg_pool(h).unwrap();
            let z = g.dense(p, v[5], None).unwrap();
            g.softmax_cross_entropy(z, &labels).unwrap()
        });
    }
}

fn tiny_spec() -> TcResNet8Spec {
    TcResNet8Spec {
        channels: [4, 4, 6, 6],
        n_classes: 3,
        n_mfcc: 5,
        n_frames: 12,
        first_kernel: 3,
        kernel: 3,
    }
}

fn tiny_batch(seed: u64, spec: &TcResNet8Spec) -> Vec<Sample> {
    let mut rng = rng_for(seed, "gradcheck/batch");
    (0..4)
        .map(|i| Sample {
            task: 0,
            label: i % spec.n_classes,
            features: Arc::new(random(&mut rng, &[spec.n_mfcc, spec.n_frames])),
        })
        .collect()
}

pub fn tcresnet_forward_matches_finite_differences() {
    let spec = tiny_spec();
    let mut net = SharedNet::new(&spec, 11).unwrap();
    let samples = tiny_batch(11, &spec);
    let idx = net.trainable(0);
    let mode = ForwardMode::Train {
        task: 0,
        update_stats: false,
    };
    let mut g = Graph::new();
    let (_, grad) = batch_gradient(&mut net, &mut g, &samples, mode, &idx).unwrap();
    let theta = net.flat_params(&idx);
    assert_eq!(grad.len(), theta.len());

    let mut loss_at = |theta: &[f64], net: &mut SharedNet| {
        net.set_flat_params(&idx, theta).unwrap();
        g.clear();
        let (loss, _) = forward_loss(net, &mut g, &samples, mode).unwrap();
        g.value(loss).unwrap().item()
    };
    // A ReLU kink can sit inside the stencil for a handful of coordinates;
    // demand agreement on nearly all of them.
    let mut bad = Vec::new();
    for i in 0..theta.len() {
        let mut p = theta.clone();
        p[i] += H;
        let fp = loss_at(&p, &mut net);
        p[i] -= 2.0 * H;
        let fm = loss_at(&p, &mut net);
        let numeric = (fp - fm) / (2.0 * H);
        if !close(grad[i], numeric) {
            bad.push((i, grad[i], numeric));
        }
    }
    assert!(
        bad.len() * 200 <= theta.len(),
        "{} of {} coordinates disagree: {:?}",
        bad.len(),
        theta.len(),
        &bad[..bad.len().min(5)]
    );
}

pub fn ewc_penalty_gradient_matches_finite_differences() {
    let mut rng = rng_for(9, "gradcheck/ewc");
    for _ in 0..FIXTURES {
        let n = rng.gen_range(1..12);
        let lambda = rng.gen_range(0.0..5.0);
        let omega: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
        let anchor: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut grad = vec![0.0; n];
        ewc_penalty_grad(lambda, &omega, &anchor, &theta, &mut grad).unwrap();
        for i in 0..n {
            let mut p = theta.clone();
            p[i] += H;
            let fp = ewc_penalty(lambda, &omega, &anchor, &p).unwrap();
            p[i] -= 2.0 * H;
            let fm = ewc_penalty(lambda, &omega, &anchor, &p).unwrap();
            assert!(close(grad[i], (fp - fm) / (2.0 * H)));
        }
    }
}

pub fn si_penalty_gradient_matches_finite_differences() {
    let spec = tiny_spec();
    let mut rng = rng_for(10, "gradcheck/si");
    for f in 0..FIXTURES {
        let mut net = SharedNet::new(&spec, f as u64).unwrap();
        let idx = net.regularized();
        let n = net.count_parameters(&idx);
        let mut si = Si::new(rng.gen_range(0.1..3.0), 0.1).unwrap();
        si.before_task(&mut net, 0).unwrap();
        let start = net.flat_params(&idx);
        let grad_kws: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let delta: Vec<f64> = grad_kws.iter().map(|g| -0.3 * g).collect();
        si.after_step(&grad_kws, &delta);
        let end: Vec<f64> = start.iter().zip(&delta).map(|(a, d)| a + d).collect();
        net.set_flat_params(&idx, &end).unwrap();
        si.after_task(&mut net, &mut Graph::new(), 0, &[]).unwrap();

        let theta: Vec<f64> = end.iter().map(|t| t + rng.gen_range(-0.5..0.5)).collect();
        let mut grad = vec![0.0; n];
        let value = si.penalty(&theta, &mut grad).unwrap();
        assert!(value > 0.0);
        for _ in 0..8 {
            let i = rng.gen_range(0..n);
            let mut p = theta.clone();
            p[i] += H;
            let fp = si.penalty(&p, &mut vec![0.0; n]).unwrap();
            p[i] -= 2.0 * H;
            let fm = si.penalty(&p, &mut vec![0.0; n]).unwrap();
            assert!(close(grad[i], (fp - fm) / (2.0 * H)), "SI coordinate {i}");
        }
    }
}

pub const CHECKS: &[(&str, fn())] = &[
    (
        "conv1d_matches_finite_differences",
        conv1d_matches_finite_differences,
    ),
    (
        "batch_norm_batch_statistics_match_finite_differences",
        batch_norm_batch_statistics_match_finite_differences,
    ),
    (
        "batch_norm_running_statistics_match_finite_differences",
        batch_norm_running_statistics_match_finite_differences,
    ),
    (
        "relu_matches_finite_differences",
        relu_matches_finite_differences,
    ),
    (
        "elementwise_ops_match_finite_differences",
        elementwise_ops_match_finite_differences,
    ),
    (
        "pooling_dense_and_gather_match_finite_differences",
        pooling_dense_and_gather_match_finite_differences,
    ),
    (
        "softmax_cross_entropy_matches_finite_differences",
        softmax_cross_entropy_matches_finite_differences,
    ),
    (
        "composite_residual_chain_matches_finite_differences",
        composite_residual_chain_matches_finite_differences,
    ),
    (
        "tcresnet_forward_matches_finite_differences",
        tcresnet_forward_matches_finite_differences,
    ),
    (
        "ewc_penalty_gradient_matches_finite_differences",
        ewc_penalty_gradient_matches_finite_differences,
    ),
    (
        "si_penalty_gradient_matches_finite_differences",
        si_penalty_gradient_matches_finite_differences,
    ),
];
