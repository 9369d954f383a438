//! The sequential protocol: pretrain, then every incremental task with the
//! strategy hooks, filling the accuracy matrix one row per task.

mod config;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use config::{CorpusConfig, ModelConfig, RunConfig};

use crate::autodiff::{checkpoint_bytes, Graph, ParameterVector, Sgd, Tensor};
use crate::data::{batch_gradient, evaluate, Sample};
use crate::error::{Error, Result};
use crate::frontend::Mfcc;
use crate::metrics::{build_report, emit_report, AccuracyMatrix, RunReport};
use crate::models::{network_parameters, ForwardMode, Network};
use crate::seed::{fnv1a, rng_for};
use crate::strategies::{build_strategy, Strategy};
use crate::taskstream::{split_gsc, synth_stream, TaskSpec, TaskStream};

/// Feature tensors of every task, aligned with the stream's task order.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Vec<Vec<Sample>>,
    pub test: Vec<Vec<Sample>>,
    pub n_mfcc: usize,
    pub n_frames: usize,
}

impl TaskData {
    pub fn n_tasks(&self) -> usize {
        self.train.len()
    }
}

/// Builds the task stream described by the config.
pub fn build_stream(cfg: &RunConfig) -> Result<TaskStream> {
    match &cfg.corpus {
        CorpusConfig::Synth(s) => synth_stream(s, &cfg.stream, cfg.seed),
        CorpusConfig::Gsc { root } => split_gsc(root, cfg.seed, &cfg.stream),
    }
}

fn extract_split(
    stream: &TaskStream,
    task: &TaskSpec,
    clips: &[crate::taskstream::ClipRef],
    mfcc: &Mfcc,
) -> Result<Vec<Sample>> {
    clips
        .par_iter()
        .map(|c| {
            let audio = stream.load_clip(c)?;
            let f = mfcc.extract(&audio.samples)?;
            let features = Tensor::new(vec![f.n_mfcc, f.n_frames], f.transposed())?;
            Ok(Sample {
                task: task.task_id,
                label: c.label,
                features: Arc::new(features),
            })
        })
        .collect()
}

/// MFCC features for every clip of the stream.
pub fn prepare_data(
    stream: &TaskStream,
    frontend: &crate::frontend::FrontendConfig,
) -> Result<TaskData> {
    let mfcc = Mfcc::new(frontend.clone())?;
    let n_frames = frontend
        .n_frames(crate::frontend::SAMPLE_RATE as usize)
        .ok_or_else(|| Error::config("frontend.frame_length_ms", "frame longer than a clip"))?;
    let mut data = TaskData {
        train: Vec::new(),
        test: Vec::new(),
        n_mfcc: frontend.n_mfcc,
        n_frames,
    };
    for task in &stream.tasks {
        data.train
            .push(extract_split(stream, task, &task.train, &mfcc)?);
        data.test
            .push(extract_split(stream, task, &task.test, &mfcc)?);
    }
    Ok(data)
}

/// A finished run: the report plus the trained network and a parameter
/// snapshot taken after every task.
pub struct RunOutcome {
    pub report: RunReport,
    pub network: Box<dyn Network>,
    pub strategy: Box<dyn Strategy>,
    pub snapshots: Vec<ParameterVector>,
}

pub fn stream_hash(stream: &TaskStream) -> Result<String> {
    Ok(format!("{:016x}", fnv1a(stream.to_json()?.as_bytes())))
}

/// Builds the stream, extracts features and runs the protocol.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let stream = build_stream(cfg)?;
    let data = prepare_data(&stream, &cfg.frontend)?;
    Ok(run_prepared(cfg, &stream, &data)?.report)
}

fn diverged(cfg: &RunConfig, net: &dyn Network, task: usize, epoch: usize) -> Error {
    let dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| std::env::temp_dir().join(format!("kwscl-{}", cfg.hash())));
    let path = dir.join(format!("diverged_task{task}_epoch{epoch}.ckpt"));
    let written = std::fs::create_dir_all(&dir)
        .and_then(|_| std::fs::write(&path, checkpoint_bytes(&network_parameters(net))));
    let checkpoint = match written {
        Ok(()) => path.display().to_string(),
        Err(e) => format!("<not written: {e}>"),
    };
    log::error!("non-finite loss in task {task} epoch {epoch}; checkpoint {checkpoint}");
    Error::DivergedLoss {
        task,
        epoch,
        checkpoint,
    }
}

fn write_task_files(
    dir: &Path,
    task: usize,
    net: &dyn Network,
    strategy: &dyn Strategy,
) -> Result<()> {
    let ck = dir.join("checkpoints");
    std::fs::create_dir_all(&ck)?;
    std::fs::write(
        ck.join(format!("task_{task}.ckpt")),
        checkpoint_bytes(&network_parameters(net)),
    )?;
    std::fs::write(
        ck.join(format!("task_{task}.strategy.json")),
        serde_json::to_string(&strategy.state_json())?,
    )?;
    Ok(())
}

/// Runs the protocol on prepared features. Single-threaded and fully
/// determined by `cfg` and the data.
pub fn run_prepared(cfg: &RunConfig, stream: &TaskStream, data: &TaskData) -> Result<RunOutcome> {
    cfg.validate()?;
    let n = stream.n_tasks();
    if data.n_tasks() != n {
        return Err(Error::InvalidArgument(format!(
            "prepared data has {} tasks, stream has {n}",
            data.n_tasks()
        )));
    }
    let seed = cfg.seed;
    let classes: Vec<usize> = stream.tasks.iter().map(TaskSpec::n_classes).collect();
    let spec = cfg.model_spec(classes[0], data.n_frames);
    let mut strategy = build_strategy(&cfg.strategy, seed, n, classes[0])?;
    let mut net = strategy.build_network(&spec, seed)?;
    let base_params = net.count_parameters(&[0, 1, 2]);
    let mut g = Graph::new();
    let mut matrix = AccuracyMatrix::new(n);
    let mut extra_series = Vec::with_capacity(n);
    let mut final_loss = Vec::with_capacity(n);
    let mut epoch_seconds = Vec::with_capacity(n);
    let mut snapshots = Vec::with_capacity(n);
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        stream.write_manifest(&dir.join("stream.json"))?;
        std::fs::write(dir.join("config.kv"), cfg.to_kv())?;
    }

    for t in 0..n {
        net.add_task(t, classes[t])?;
        strategy.before_task(net.as_mut(), t)?;
        let train = strategy.augment_data(t, &data.train[t])?;
        if train.is_empty() {
            return Err(Error::EmptyData(format!(
                "task {t} has no training samples"
            )));
        }
        let idx = net.trainable(t);
        let reg = net.regularized();
        if idx.get(..reg.len()) != Some(reg.as_slice()) {
            return Err(Error::InvalidModel(
                "regularized components must lead the trainable list".into(),
            ));
        }
        let r = net.count_parameters(&reg);
        let mut theta = net.flat_params(&idx);
        let mut sgd = Sgd::new(cfg.sgd.clone())?;
        let epochs = if t == 0 {
            cfg.pretrain_epochs
        } else {
            cfg.task_epochs
        };
        let mut times = Vec::with_capacity(epochs);
        let mut last_loss = 0.0;
        let mode = ForwardMode::Train {
            task: t,
            update_stats: true,
        };

        for e in 0..epochs {
            let start = Instant::now();
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng_for(seed, &format!("train/t{t}/e{e}")));
            let mut loss_sum = 0.0;
            for chunk in order.chunks(cfg.sgd.batch_size) {
                let batch: Vec<Sample> = chunk.iter().map(|&i| train[i].clone()).collect();
                let (loss, mut grad) =
                    match batch_gradient(net.as_mut(), &mut g, &batch, mode, &idx) {
                        Ok(v) => v,
                        Err(Error::NonFinite(_)) => return Err(diverged(cfg, net.as_ref(), t, e)),
                        Err(other) => return Err(other),
                    };
                let grad_kws = grad[..r].to_vec();
                let penalty = strategy.penalty(&theta[..r], &mut grad[..r])?;
                let total = loss + penalty;
                if !total.is_finite() || grad.iter().any(|x| !x.is_finite()) {
                    return Err(diverged(cfg, net.as_ref(), t, e));
                }
                strategy.post_batch(net.as_mut(), &mut g, t, &mut grad)?;
                let before = theta[..r].to_vec();
                sgd.step_flat(&mut theta, &grad)?;
                net.set_flat_params(&idx, &theta)?;
                let delta: Vec<f64> = theta[..r].iter().zip(&before).map(|(a, b)| a - b).collect();
                strategy.after_step(&grad_kws, &delta);
                loss_sum += total * batch.len() as f64;
            }
            last_loss = loss_sum / train.len() as f64;
            times.push(start.elapsed().as_secs_f64());
            log::debug!(
                "{} task {t} epoch {e}: loss {last_loss:.5}",
                strategy.label()
            );
        }

        net.finish_task(t);
        strategy.after_task(net.as_mut(), &mut g, t, &data.train[t])?;
        for k in 0..=t {
            matrix.set(t, k, evaluate(net.as_mut(), &data.test[k], k)?)?;
        }
        log::info!(
            "{} after task {t}: {:?}",
            strategy.label(),
            (0..=t)
                .map(|k| matrix.get(t, k).unwrap_or(f64::NAN))
                .collect::<Vec<_>>()
        );
        extra_series.push(strategy.extra_params(net.as_ref()));
        final_loss.push(last_loss);
        epoch_seconds.push(times);
        if let (Some(dir), true) = (&cfg.output_dir, cfg.checkpoints) {
            write_task_files(dir, t, net.as_ref(), strategy.as_ref())?;
        }
        snapshots.push(network_parameters(net.as_ref()));
    }

    let report = build_report(
        strategy.name(),
        &strategy.label(),
        seed,
        cfg.hash(),
        stream_hash(stream)?,
        classes,
        &matrix,
        cfg.include_pretrain,
        base_params,
        extra_series,
        strategy.buffer_bytes(),
        final_loss,
        epoch_seconds,
        strategy.warnings(),
    )?;
    if let Some(dir) = &cfg.output_dir {
        emit_report(&report, dir)?;
    }
    Ok(RunOutcome {
        report,
        network: net,
        strategy,
        snapshots,
    })
}

/// Default output root: `$KWSCL_OUTPUT` or `./runs`.
pub fn default_output_root() -> PathBuf {
    std::env::var_os("KWSCL_OUTPUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}
