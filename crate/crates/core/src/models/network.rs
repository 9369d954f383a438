//! Multi-task network layouts the strategies train.
//!
//! Every layout is a flat list of [`Component`]s plus routing: which chain
//! of components serves a task, and which components a task may update.

use serde::{Deserialize, Serialize};

use super::layers::{BnMode, Component};
use super::subnet::{instantiate_subnet, ScalingConfig, SubNetSpec};
use super::tcresnet::{build_head, build_stem, build_tcresnet8_in, build_trunk, TcResNet8Spec};
use crate::autodiff::{Bound, Graph, ParameterVector, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// One backbone, one head per task.
    Shared,
    /// Shared encoder feeding one frozen sub-network per task.
    Progressive,
    /// An independent model per task.
    Isolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Training step for `task`: its trainable components run with batch
    /// statistics and receive gradients, everything else runs frozen.
    Train {
        task: usize,
        update_stats: bool,
    },
    /// Running batch-norm moments, but gradients still flow into `task`'s
    /// trainable components (per-sample importance estimates).
    EvalGrad {
        task: usize,
    },
    Eval,
}

#[derive(Debug, Clone)]
pub struct TaskLogits {
    pub task: usize,
    /// Batch rows routed through this task's head.
    pub rows: Vec<usize>,
    pub logits: Var,
}

#[derive(Debug, Default)]
pub struct Trace {
    pub outputs: Vec<TaskLogits>,
    bound: Vec<(usize, Bound)>,
}

pub trait Network: Send {
    fn layout(&self) -> Layout;
    fn components(&self) -> &[Component];
    fn components_mut(&mut self) -> &mut [Component];
    /// Number of tasks the network can currently serve.
    fn n_tasks(&self) -> usize;
    /// Grows the network for a new task. Task 0 exists from construction.
    fn add_task(&mut self, task: usize, n_classes: usize) -> Result<()>;
    /// Components evaluated, in order, for `task` (the evaluation model).
    fn route(&self, task: usize) -> Result<Vec<usize>>;
    /// Components updated while learning `task`. Shared components come first.
    fn trainable(&self, task: usize) -> Vec<usize>;
    /// Shared components subject to importance penalties; a prefix of every `trainable` list.
    fn regularized(&self) -> Vec<usize> {
        Vec::new()
    }
    fn finish_task(&mut self, _task: usize) {}

    /// `x: [B, n_mfcc, n_frames]`; `tasks[i]` selects the route for row `i`.
    fn forward(
        &mut self,
        g: &mut Graph,
        x: Var,
        tasks: &[usize],
        mode: ForwardMode,
    ) -> Result<Trace>;

    fn count_parameters(&self, idx: &[usize]) -> usize {
        idx.iter()
            .map(|&i| self.components()[i].count_parameters())
            .sum()
    }

    fn flat_params(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .flat_map(|&i| self.components()[i].params.flatten_trainable())
            .collect()
    }

    fn set_flat_params(&mut self, idx: &[usize], flat: &[f64]) -> Result<()> {
        let mut off = 0;
        for &i in idx {
            let c = &mut self.components_mut()[i];
            let n = c.params.trainable_count();
            let chunk = flat
                .get(off..off + n)
                .ok_or_else(|| Error::Shape("flat parameter vector too short".into()))?;
            c.params.unflatten_trainable(chunk)?;
            off += n;
        }
        if off != flat.len() {
            return Err(Error::Shape("flat parameter vector too long".into()));
        }
        Ok(())
    }

    /// Gradient of the last sweep over `idx`, zeros for components the trace did not touch.
    fn flat_grad(&self, g: &Graph, trace: &Trace, idx: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.count_parameters(idx));
        for &i in idx {
            let c = &self.components()[i];
            match trace.bound.iter().find(|(j, _)| *j == i) {
                Some((_, b)) => c.params.collect_grads(g, b, &mut out)?,
                None => out.extend(std::iter::repeat_n(0.0, c.count_parameters())),
            }
        }
        Ok(out)
    }
}

/// Every component's segments in one vector, names prefixed `{index}:{component}/`.
pub fn network_parameters(net: &dyn Network) -> ParameterVector {
    let mut pv = ParameterVector::new();
    for (i, c) in net.components().iter().enumerate() {
        for s in c.params.segments() {
            pv.push(
                format!("{i}:{}/{}", c.name, s.name),
                s.tensor.clone(),
                s.kind,
            )
            .expect("prefixed names are unique");
        }
    }
    pv
}

/// Inverse of [`network_parameters`]; the layouts must match exactly.
pub fn load_network_parameters(net: &mut dyn Network, pv: &ParameterVector) -> Result<()> {
    let expected = network_parameters(net);
    if expected.len() != pv.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} segments, network has {}",
            pv.len(),
            expected.len()
        )));
    }
    let mut it = pv.segments().iter();
    for c in net.components_mut() {
        for s in c.params.segments_mut() {
            let src = it.next().expect("lengths checked");
            if src.tensor.shape() != s.tensor.shape()
                || src.kind != s.kind
                || !src.name.ends_with(&s.name)
            {
                return Err(Error::Checkpoint(format!(
                    "segment {} does not match {}",
                    src.name, s.name
                )));
            }
            s.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
    }
    Ok(())
}

fn modes(mode: ForwardMode, trainable: &[usize], comp: usize) -> (BnMode, bool) {
    match mode {
        ForwardMode::Train { update_stats, .. } if trainable.contains(&comp) => {
            (BnMode::Train { update_stats }, true)
        }
        ForwardMode::EvalGrad { .. } if trainable.contains(&comp) => (BnMode::Eval, true),
        _ => (BnMode::Eval, false),
    }
}

fn run_chain(
    comps: &mut [Component],
    chain: &[usize],
    trainable: &[usize],
    g: &mut Graph,
    x: Var,
    mode: ForwardMode,
    trace: &mut Trace,
) -> Result<Var> {
    let mut h = x;
    for &i in chain {
        let (bn, rg) = modes(mode, trainable, i);
        let (out, b) = comps[i].forward(g, h, bn, rg)?;
        trace.bound.push((i, b));
        h = out;
    }
    Ok(h)
}

fn single_task(tasks: &[usize]) -> Result<usize> {
    match tasks.split_first() {
        Some((&t, rest)) if rest.iter().all(|&r| r == t) => Ok(t),
        Some(_) => Err(Error::InvalidArgument(
            "this layout needs single-task batches".into(),
        )),
        None => Err(Error::EmptyData("empty batch".into())),
    }
}

fn train_task(mode: ForwardMode) -> Option<usize> {
    match mode {
        ForwardMode::Train { task, .. } | ForwardMode::EvalGrad { task } => Some(task),
        ForwardMode::Eval => None,
    }
}

/// Backbone shared by all tasks plus one linear head per task.
#[derive(Debug, Clone)]
pub struct SharedNet {
    spec: TcResNet8Spec,
    seed: u64,
    comps: Vec<Component>,
}

impl SharedNet {
    const HEAD0: usize = 2;

    /// `spec.n_classes` sizes the pretraining head.
    pub fn new(spec: &TcResNet8Spec, seed: u64) -> Result<Self> {
        let model = build_tcresnet8_in(spec, seed, "tcresnet8")?;
        Ok(SharedNet {
            spec: spec.clone(),
            seed,
            comps: model.components,
        })
    }
}

impl Network for SharedNet {
    fn layout(&self) -> Layout {
        Layout::Shared
    }

    fn components(&self) -> &[Component] {
        &self.comps
    }

    fn components_mut(&mut self) -> &mut [Component] {
        &mut self.comps
    }

    fn n_tasks(&self) -> usize {
        self.comps.len() - Self::HEAD0
    }

    fn add_task(&mut self, task: usize, n_classes: usize) -> Result<()> {
        if task < self.n_tasks() {
            return Ok(());
        }
        if task != self.n_tasks() {
            return Err(Error::UnknownTask(task));
        }
        let head = build_head(
            self.spec.feature_channels(),
            n_classes,
            self.seed,
            &format!("head/t{task}"),
        )?;
        self.comps.push(head);
        Ok(())
    }

    fn route(&self, task: usize) -> Result<Vec<usize>> {
        if task >= self.n_tasks() {
            return Err(Error::UnknownTask(task));
        }
        Ok(vec![0, 1, Self::HEAD0 + task])
    }

    fn trainable(&self, task: usize) -> Vec<usize> {
        (0..(Self::HEAD0 + task + 1).min(self.comps.len())).collect()
    }

    fn regularized(&self) -> Vec<usize> {
        vec![0, 1]
    }

    fn forward(
        &mut self,
        g: &mut Graph,
        x: Var,
        tasks: &[usize],
        mode: ForwardMode,
    ) -> Result<Trace> {
        if let Some(&bad) = tasks.iter().find(|&&t| t >= self.n_tasks()) {
            return Err(Error::UnknownTask(bad));
        }
        let trainable = train_task(mode)
            .map(|t| self.trainable(t))
            .unwrap_or_default();
        let mut trace = Trace::default();
        let pooled = run_chain(&mut self.comps, &[0, 1], &trainable, g, x, mode, &mut trace)?;

        let mut order: Vec<usize> = Vec::new();
        for &t in tasks {
            if !order.contains(&t) {
                order.push(t);
            }
        }
        for t in order {
            let rows: Vec<usize> = (0..tasks.len()).filter(|&i| tasks[i] == t).collect();
            let feats = if rows.len() == tasks.len() {
                pooled
            } else {
                g.gather_rows(pooled, &rows)?
            };
            let logits = run_chain(
                &mut self.comps,
                &[Self::HEAD0 + t],
                &trainable,
                g,
                feats,
                mode,
                &mut trace,
            )?;
            trace.outputs.push(TaskLogits {
                task: t,
                rows,
                logits,
            });
        }
        Ok(trace)
    }
}

/// Shared encoder (first conv + first residual block of the pretrained
/// model) feeding one sub-network per task. Task 0 keeps the rest of the
/// pretrained model as its sub-network.
#[derive(Debug, Clone)]
pub struct ProgressiveNet {
    spec: TcResNet8Spec,
    seed: u64,
    scaling: ScalingConfig,
    fixed: bool,
    freeze_shared: bool,
    comps: Vec<Component>,
    subnets: Vec<SubNetSpec>,
    frozen: Vec<bool>,
}

impl ProgressiveNet {
    const ENCODER: usize = 0;
    const TRUNK: usize = 1;
    const HEAD0: usize = 2;

    pub fn new(
        spec: &TcResNet8Spec,
        seed: u64,
        scaling: ScalingConfig,
        fixed: bool,
        freeze_shared: bool,
    ) -> Result<Self> {
        let ns = "tcresnet8";
        let comps = vec![
            build_stem(spec, seed, ns)?,
            build_trunk(spec, seed, ns)?,
            build_head(spec.feature_channels(), spec.n_classes, seed, ns)?,
        ];
        Ok(ProgressiveNet {
            spec: spec.clone(),
            seed,
            scaling,
            fixed,
            freeze_shared,
            comps,
            subnets: Vec::new(),
            frozen: vec![false; 3],
        })
    }

    fn subnet_index(task: usize) -> usize {
        Self::HEAD0 + task
    }

    /// Specs of the incremental sub-networks, in task order (task 1 first).
    pub fn subnet_specs(&self) -> &[SubNetSpec] {
        &self.subnets
    }

    /// Component index of a task's sub-network (task >= 1).
    pub fn subnet_component(&self, task: usize) -> Result<usize> {
        if task == 0 || task >= self.n_tasks() {
            return Err(Error::UnknownTask(task));
        }
        Ok(Self::subnet_index(task))
    }

    pub fn encoder(&self) -> &Component {
        &self.comps[Self::ENCODER]
    }

    pub fn is_frozen(&self, comp: usize) -> bool {
        self.frozen[comp]
    }

    pub fn freeze_shared(&self) -> bool {
        self.freeze_shared
    }

    /// Parameters added by sub-networks beyond the pretrained model.
    pub fn subnet_parameters(&self) -> usize {
        (Self::HEAD0 + 1..self.comps.len())
            .map(|i| self.comps[i].count_parameters())
            .sum()
    }
}

impl Network for ProgressiveNet {
    fn layout(&self) -> Layout {
        Layout::Progressive
    }

    fn components(&self) -> &[Component] {
        &self.comps
    }

    fn components_mut(&mut self) -> &mut [Component] {
        &mut self.comps
    }

    fn n_tasks(&self) -> usize {
        self.comps.len() - Self::HEAD0
    }

    fn add_task(&mut self, task: usize, n_classes: usize) -> Result<()> {
        if task < self.n_tasks() {
            return Ok(());
        }
        if task != self.n_tasks() {
            return Err(Error::UnknownTask(task));
        }
        let (spec, net) = instantiate_subnet(
            n_classes,
            &self.scaling,
            self.fixed,
            self.spec.stem_channels(),
            self.spec.kernel,
            self.seed,
            &format!("subnet/t{task}"),
        )?;
        self.subnets.push(spec);
        self.comps.push(net);
        self.frozen.push(false);
        Ok(())
    }

    fn route(&self, task: usize) -> Result<Vec<usize>> {
        match task {
            0 => Ok(vec![Self::ENCODER, Self::TRUNK, Self::HEAD0]),
            t if t < self.n_tasks() => Ok(vec![Self::ENCODER, Self::subnet_index(t)]),
            t => Err(Error::UnknownTask(t)),
        }
    }

    fn trainable(&self, task: usize) -> Vec<usize> {
        let own: Vec<usize> = match task {
            0 => vec![Self::ENCODER, Self::TRUNK, Self::HEAD0],
            t => vec![Self::ENCODER, Self::subnet_index(t)],
        };
        own.into_iter()
            .filter(|&i| i < self.comps.len() && !self.frozen[i])
            .filter(|&i| !(i == Self::ENCODER && task > 0 && self.freeze_shared))
            .collect()
    }

    fn finish_task(&mut self, task: usize) {
        if let Ok(route) = self.route(task) {
            for i in route.into_iter().filter(|&i| i != Self::ENCODER) {
                self.frozen[i] = true;
            }
        }
    }

    fn forward(
        &mut self,
        g: &mut Graph,
        x: Var,
        tasks: &[usize],
        mode: ForwardMode,
    ) -> Result<Trace> {
        let task = single_task(tasks)?;
        let chain = self.route(task)?;
        let trainable = train_task(mode)
            .map(|t| self.trainable(t))
            .unwrap_or_default();
        let mut trace = Trace::default();
        let logits = run_chain(&mut self.comps, &chain, &trainable, g, x, mode, &mut trace)?;
        trace.outputs.push(TaskLogits {
            task,
            rows: (0..tasks.len()).collect(),
            logits,
        });
        Ok(trace)
    }
}

/// One independently initialised model per task; nothing is shared.
#[derive(Debug, Clone)]
pub struct IsolatedNet {
    spec: TcResNet8Spec,
    seed: u64,
    comps: Vec<Component>,
}

impl IsolatedNet {
    const PER_TASK: usize = 3;

    pub fn new(spec: &TcResNet8Spec, seed: u64) -> Result<Self> {
        let model = build_tcresnet8_in(spec, seed, "tcresnet8")?;
        Ok(IsolatedNet {
            spec: spec.clone(),
            seed,
            comps: model.components,
        })
    }

    /// Parameters of every model after the pretrained one.
    pub fn extra_parameters(&self) -> usize {
        self.comps[Self::PER_TASK..]
            .iter()
            .map(Component::count_parameters)
            .sum()
    }
}

impl Network for IsolatedNet {
    fn layout(&self) -> Layout {
        Layout::Isolated
    }

    fn components(&self) -> &[Component] {
        &self.comps
    }

    fn components_mut(&mut self) -> &mut [Component] {
        &mut self.comps
    }

    fn n_tasks(&self) -> usize {
        self.comps.len() / Self::PER_TASK
    }

    fn add_task(&mut self, task: usize, n_classes: usize) -> Result<()> {
        if task < self.n_tasks() {
            return Ok(());
        }
        if task != self.n_tasks() {
            return Err(Error::UnknownTask(task));
        }
        let spec = TcResNet8Spec {
            n_classes,
            ..self.spec.clone()
        };
        let model = build_tcresnet8_in(&spec, self.seed, &format!("standalone/t{task}"))?;
        self.comps.extend(model.components);
        Ok(())
    }

    fn route(&self, task: usize) -> Result<Vec<usize>> {
        if task >= self.n_tasks() {
            return Err(Error::UnknownTask(task));
        }
        let base = task * Self::PER_TASK;
        Ok((base..base + Self::PER_TASK).collect())
    }

    fn trainable(&self, task: usize) -> Vec<usize> {
        self.route(task).unwrap_or_default()
    }

    fn forward(
        &mut self,
        g: &mut Graph,
        x: Var,
        tasks: &[usize],
        mode: ForwardMode,
    ) -> Result<Trace> {
        let task = single_task(tasks)?;
        let chain = self.route(task)?;
        let trainable = train_task(mode)
            .map(|t| self.trainable(t))
            .unwrap_or_default();
        let mut trace = Trace::default();
        let logits = run_chain(&mut self.comps, &chain, &trainable, g, x, mode, &mut trace)?;
        trace.outputs.push(TaskLogits {
            task,
            rows: (0..tasks.len()).collect(),
            logits,
        });
        Ok(trace)
    }
}
