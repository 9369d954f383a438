//! End-to-end protocol on a tiny synthetic stream: freezing, routing,
//! parameter accounting and reproducibility.

use std::sync::{Mutex, MutexGuard, OnceLock};

use kwscl_core::autodiff::{Graph, ParameterVector, Tensor};
use kwscl_core::models::{ForwardMode, Network, ProgressiveNet, ScalingConfig, TcResNet8Spec};
use kwscl_core::taskstream::TaskStream;
use kwscl_core::trainer::{
    build_stream, prepare_data, run_prepared, RunConfig, RunOutcome, TaskData,
};

const BASE: &str = "
seed = 7
synth.keywords = 7
synth.clips = 10
stream.pretrain_keywords = 3
stream.tasks = 2
stream.keywords_per_task = 2
train.pretrain_epochs = 4
train.task_epochs = 3
output.checkpoints = false
";

fn config(extra: &str) -> RunConfig {
    RunConfig::parse_kv(&format!("{BASE}\n{extra}")).unwrap()
}

fn prepared() -> &'static (TaskStream, TaskData) {
    static DATA: OnceLock<(TaskStream, TaskData)> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = config("");
        let stream = build_stream(&cfg).unwrap();
        let data = prepare_data(&stream, &cfg.frontend).unwrap();
        (stream, data)
    })
}

fn run_with(extra: &str) -> RunOutcome {
    let (stream, data) = prepared();
    run_prepared(&config(extra), stream, data).unwrap()
}

fn segment_bits(pv: &ParameterVector, prefix: &str) -> Vec<(String, Vec<u64>)> {
    pv.segments()
        .iter()
        .filter(|s| s.name.starts_with(prefix))
        .map(|s| {
            (
                s.name.clone(),
                s.tensor.data().iter().map(|x| x.to_bits()).collect(),
            )
        })
        .collect()
}

fn pcl_outcome() -> MutexGuard<'static, RunOutcome> {
    static RUN: OnceLock<Mutex<RunOutcome>> = OnceLock::new();
    RUN.get_or_init(|| Mutex::new(run_with("strategy.name = pcl")))
        .lock()
        .unwrap()
}

#[test]
fn pcl_subnets_stay_bitwise_frozen() {
    let out = pcl_outcome();
    let snaps = &out.snapshots;
    assert_eq!(snaps.len(), 3, "one snapshot per task");

    // Trunk and head of the pretrained route are frozen after task 0.
    for prefix in ["1:", "2:"] {
        let after = segment_bits(&snaps[0], prefix);
        assert!(!after.is_empty());
        assert_eq!(
            after,
            segment_bits(&snaps[2], prefix),
            "component {prefix} moved"
        );
    }
    // Sub-net 1 (component 3), including its running statistics.
    let sub1 = segment_bits(&snaps[1], "3:");
    assert!(!sub1.is_empty());
    assert_eq!(sub1, segment_bits(&snaps[2], "3:"));
    // The shared encoder keeps training by default.
    assert_ne!(segment_bits(&snaps[0], "0:"), segment_bits(&snaps[2], "0:"));
}

#[test]
fn frozen_encoder_and_stand_alone_never_forget() {
    for extra in [
        "strategy.name = pcl\npcl.freeze_shared = true",
        "strategy.name = stand-alone",
    ] {
        let r = run_with(extra).report;
        for t in 0..r.accuracy.len() {
            for k in 0..=t {
                assert_eq!(r.accuracy[t][k], r.accuracy[k][k], "{extra}: R[{t}][{k}]");
            }
        }
        assert_eq!(r.bwt, 0.0, "{extra}");
    }
}

#[test]
fn runs_are_reproducible() {
    let a = run_with("strategy.name = si");
    let b = run_with("strategy.name = si");
    assert_eq!(a.report.without_timings(), b.report.without_timings());
    for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
        assert_eq!(segment_bits(x, ""), segment_bits(y, ""));
    }
    assert_eq!(
        pcl_outcome().report.without_timings(),
        run_with("strategy.name = pcl").report.without_timings()
    );
}

#[test]
fn parameter_accounting_per_strategy() {
    let ft = run_with("strategy.name = fine-tune").report;
    assert_eq!(ft.extra_params, 0);
    assert_eq!(ft.buffer_bytes, 0);
    assert!(ft.extra_params_series.iter().all(|&p| p == 0));

    // Progressive growth: each task adds exactly its own sub-net.
    let pcl = pcl_outcome();
    let comps = pcl.network.components();
    let sub: Vec<usize> = comps[3..].iter().map(|c| c.count_parameters()).collect();
    assert_eq!(
        pcl.report.extra_params_series,
        vec![0, sub[0], sub[0] + sub[1]]
    );
    assert_eq!(pcl.report.extra_params, sub.iter().sum::<usize>());

    let fixed = run_with("strategy.name = pcl\npcl.fixed = true").report;
    assert!(fixed.extra_params > pcl.report.extra_params);

    let sa = run_with("strategy.name = stand-alone");
    let per_model: Vec<usize> = sa.network.components()[3..]
        .chunks(3)
        .map(|m| m.iter().map(|c| c.count_parameters()).sum())
        .collect();
    assert_eq!(per_model.len(), 2);
    assert_eq!(sa.report.extra_params, per_model.iter().sum::<usize>());

    // Anchor plus importance map over the regularised shared components.
    let ewc = run_with("strategy.name = ewc");
    let shared = ewc.network.count_parameters(&ewc.network.regularized());
    assert!(shared > 0);
    assert_eq!(ewc.report.extra_params, 2 * shared);
}

#[test]
fn rehearsal_buffers_follow_their_closed_forms() {
    let (_, data) = prepared();
    let bytes_per_sample = data.n_mfcc * data.n_frames * std::mem::size_of::<f64>();

    let nr = run_with("strategy.name = nr\nnr.xi = 0.5");
    let stored: usize = data
        .train
        .iter()
        .map(|t| (t.len() as f64 * 0.5).ceil() as usize)
        .sum();
    assert_eq!(nr.report.buffer_bytes, stored * bytes_per_sample);
    assert_eq!(nr.report.extra_params, 0);

    let gem = run_with("strategy.name = gem\ngem.buffer = 12");
    let state = gem.strategy.state_json();
    let quota = state["quota_per_task"].as_u64().unwrap() as usize;
    assert_eq!(quota, 4);
    let per_task: Vec<usize> = serde_json::from_value(state["stored_per_task"].clone()).unwrap();
    assert_eq!(per_task.len(), 3);
    assert!(per_task.iter().all(|&n| n <= quota));
    assert_eq!(
        gem.report.buffer_bytes,
        per_task.iter().sum::<usize>() * bytes_per_sample
    );
}

fn tiny_spec() -> TcResNet8Spec {
    TcResNet8Spec {
        channels: [4, 6, 8, 10],
        n_classes: 5,
        n_mfcc: 6,
        n_frames: 12,
        ..TcResNet8Spec::default()
    }
}

#[test]
fn registry_holds_one_frozen_subnet_per_task() {
    let scaling = ScalingConfig { mu: 1.0, c0: 5 };
    let mut net = ProgressiveNet::new(&tiny_spec(), 3, scaling, false, false).unwrap();
    net.finish_task(0);
    let classes = [2, 3, 4];
    for (i, &c) in classes.iter().enumerate() {
        net.add_task(i + 1, c).unwrap();
        net.finish_task(i + 1);
    }
    assert_eq!(net.subnet_specs().len(), 3);
    assert_eq!(net.n_tasks(), 4);
    for t in 1..=3 {
        assert!(net.is_frozen(net.subnet_component(t).unwrap()));
        assert!(!net.trainable(t).contains(&net.subnet_component(t).unwrap()));
    }
    assert!(!net.is_frozen(0), "the shared encoder stays trainable");

    // Every route ends in a head sized to its own keyword set.
    let x = Tensor::filled(&[2, 6, 12], 0.1);
    for (t, &c) in [5].iter().chain(&classes).enumerate() {
        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let trace = net.forward(&mut g, xv, &[t, t], ForwardMode::Eval).unwrap();
        assert_eq!(trace.outputs.len(), 1);
        assert_eq!(
            g.value(trace.outputs[0].logits).unwrap().shape(),
            &[2, c],
            "task {t}"
        );
        assert_eq!(
            net.route(t).unwrap()[0],
            0,
            "task {t} starts at the encoder"
        );
    }
    assert!(net.route(4).is_err());
}

#[test]
fn frozen_shared_encoder_is_excluded_from_later_tasks() {
    let scaling = ScalingConfig { mu: 1.0, c0: 5 };
    let mut net = ProgressiveNet::new(&tiny_spec(), 3, scaling, false, true).unwrap();
    assert_eq!(net.trainable(0), vec![0, 1, 2]);
    net.finish_task(0);
    net.add_task(1, 2).unwrap();
    assert_eq!(net.trainable(1), vec![3]);
}
