//! Continual-learning strategies behind one lifecycle interface.
//!
//! The trainer drives every strategy through the same hooks; a strategy
//! overrides only the ones it needs and the defaults are identities.

mod basic;
mod ewc;
mod gem;
mod nr;
mod pcl;
mod qp;
mod si;

pub use basic::{FineTune, StandAlone};
pub use ewc::{ewc_fisher, ewc_penalty, ewc_penalty_grad, fisher_from_grads, Ewc, EwcState};
pub use gem::{gem_project, Gem, GemProjection};
pub use nr::{nr_mix, nr_mix_selected, nr_select, NaiveRehearsal};
pub use pcl::Pcl;
pub use qp::{nonneg_qp, QpSolution};
pub use si::{Si, SiState};

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::models::{Layout, Network, ScalingConfig, SharedNet, TcResNet8Spec};

pub trait Strategy: Send {
    /// Short identifier, e.g. `gem`.
    fn name(&self) -> &'static str;

    /// Row label for comparison tables, including the key hyperparameter.
    fn label(&self) -> String {
        self.name().to_string()
    }

    fn layout(&self) -> Layout {
        Layout::Shared
    }

    /// The network this strategy trains; `spec.n_classes` sizes the pretraining task.
    fn build_network(&self, spec: &TcResNet8Spec, seed: u64) -> Result<Box<dyn Network>> {
        Ok(Box::new(SharedNet::new(spec, seed)?))
    }

    fn before_task(&mut self, _net: &mut dyn Network, _task: usize) -> Result<()> {
        Ok(())
    }

    /// Training set actually used for `task` (`D'_t`).
    fn augment_data(&mut self, _task: usize, train: &[Sample]) -> Result<Vec<Sample>> {
        Ok(train.to_vec())
    }

    /// Penalty on the regularized parameters `theta`; its gradient is added into `grad`.
    fn penalty(&self, _theta: &[f64], _grad: &mut [f64]) -> Result<f64> {
        Ok(0.0)
    }

    /// May rewrite the batch gradient over `net.trainable(task)` before the update.
    fn post_batch(
        &mut self,
        _net: &mut dyn Network,
        _g: &mut Graph,
        _task: usize,
        _grad: &mut [f64],
    ) -> Result<()> {
        Ok(())
    }

    /// Called after every optimizer step with the task-loss gradient and the
    /// parameter change, both restricted to the regularized parameters.
    fn after_step(&mut self, _grad_kws: &[f64], _delta: &[f64]) {}

    fn after_task(
        &mut self,
        _net: &mut dyn Network,
        _g: &mut Graph,
        _task: usize,
        _train: &[Sample],
    ) -> Result<()> {
        Ok(())
    }

    /// Parameters kept beyond the pretrained model.
    fn extra_params(&self, _net: &dyn Network) -> usize {
        0
    }

    /// Bytes of stored training samples.
    fn buffer_bytes(&self) -> usize {
        0
    }

    /// Serializable snapshot stored next to each task checkpoint.
    fn state_json(&self) -> serde_json::Value {
        serde_json::Value::Null
    }

    /// Warnings accumulated during the run.
    fn warnings(&self) -> Vec<String> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    FineTune,
    StandAlone,
    Ewc,
    Si,
    Nr,
    Gem,
    Pcl,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::FineTune,
        StrategyKind::StandAlone,
        StrategyKind::Ewc,
        StrategyKind::Si,
        StrategyKind::Nr,
        StrategyKind::Gem,
        StrategyKind::Pcl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::FineTune => "fine-tune",
            StrategyKind::StandAlone => "stand-alone",
            StrategyKind::Ewc => "ewc",
            StrategyKind::Si => "si",
            StrategyKind::Nr => "nr",
            StrategyKind::Gem => "gem",
            StrategyKind::Pcl => "pcl",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "fine-tune" | "finetune" => StrategyKind::FineTune,
            "stand-alone" | "standalone" => StrategyKind::StandAlone,
            "ewc" => StrategyKind::Ewc,
            "si" => StrategyKind::Si,
            "nr" => StrategyKind::Nr,
            "gem" => StrategyKind::Gem,
            "pcl" => StrategyKind::Pcl,
            other => {
                return Err(Error::config(
                    "strategy.name",
                    format!("unknown strategy `{other}` (expected fine-tune, stand-alone, ewc, si, nr, gem or pcl)"),
                ))
            }
        })
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub ewc_lambda: f64,
    pub si_lambda: f64,
    pub si_epsilon: f64,
    pub nr_xi: f64,
    pub gem_buffer: usize,
    pub pcl_mu: f64,
    pub pcl_fixed: bool,
    pub pcl_freeze_shared: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::FineTune,
            ewc_lambda: 1.0,
            si_lambda: 1.0,
            si_epsilon: 0.1,
            nr_xi: 0.75,
            gem_buffer: 128,
            pcl_mu: 1.0,
            pcl_fixed: false,
            pcl_freeze_shared: false,
        }
    }
}

impl StrategyConfig {
    pub fn with_kind(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            ..Default::default()
        }
    }

    /// Table label of the configured strategy; equals [`Strategy::label`].
    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::FineTune => "fine-tune".into(),
            StrategyKind::StandAlone => "stand-alone".into(),
            StrategyKind::Ewc => "EWC".into(),
            StrategyKind::Si => "SI".into(),
            StrategyKind::Nr => format!("NR(xi={})", self.nr_xi),
            StrategyKind::Gem => format!("GEM-{}", self.gem_buffer),
            StrategyKind::Pcl => pcl::pcl_label(self.pcl_fixed, self.pcl_freeze_shared),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ewc_lambda >= 0.0 && self.ewc_lambda.is_finite()) {
            return Err(Error::config(
                "ewc.lambda",
                format!("must be a finite value >= 0, got {}", self.ewc_lambda),
            ));
        }
        if !(self.si_lambda >= 0.0 && self.si_lambda.is_finite()) {
            return Err(Error::config(
                "si.lambda",
                format!("must be a finite value >= 0, got {}", self.si_lambda),
            ));
        }
        if !(self.si_epsilon > 0.0 && self.si_epsilon.is_finite()) {
            return Err(Error::config(
                "si.epsilon",
                format!("must be > 0, got {}", self.si_epsilon),
            ));
        }
        nr::check_xi(self.nr_xi)?;
        if self.gem_buffer == 0 {
            return Err(Error::config("gem.buffer", "must be >= 1 sample"));
        }
        if !(self.pcl_mu > 0.0 && self.pcl_mu.is_finite()) {
            return Err(Error::config(
                "pcl.mu",
                format!("must be > 0, got {}", self.pcl_mu),
            ));
        }
        Ok(())
    }
}

/// Instantiates the configured strategy for a stream of `n_tasks` tasks
/// (pretraining included) whose pretraining task has `c0` keywords.
pub fn build_strategy(
    cfg: &StrategyConfig,
    seed: u64,
    n_tasks: usize,
    c0: usize,
) -> Result<Box<dyn Strategy>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        StrategyKind::FineTune => Box::new(FineTune),
        StrategyKind::StandAlone => Box::new(StandAlone),
        StrategyKind::Ewc => Box::new(Ewc::new(cfg.ewc_lambda)),
        StrategyKind::Si => Box::new(Si::new(cfg.si_lambda, cfg.si_epsilon)?),
        StrategyKind::Nr => Box::new(NaiveRehearsal::new(cfg.nr_xi, seed)?),
        StrategyKind::Gem => Box::new(Gem::new(cfg.gem_buffer, n_tasks, seed)?),
        StrategyKind::Pcl => Box::new(Pcl::new(
            ScalingConfig { mu: cfg.pcl_mu, c0 },
            cfg.pcl_fixed,
            cfg.pcl_freeze_shared,
        )),
    })
}

/// Parameters of every component beyond the three that make up the pretrained model.
pub(crate) fn added_component_params(net: &dyn Network) -> usize {
    net.components()
        .iter()
        .skip(3)
        .map(|c| c.count_parameters())
        .sum()
}
