use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::SgdConfig;
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::models::TcResNet8Spec;
use crate::seed::fnv1a;
use crate::strategies::StrategyConfig;
use crate::taskstream::{StreamConfig, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusConfig {
    Synth(SynthConfig),
    Gsc { root: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: [usize; 4],
    pub first_kernel: usize,
    pub kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = TcResNet8Spec::default();
        ModelConfig {
            channels: s.channels,
            first_kernel: s.first_kernel,
            kernel: s.kernel,
        }
    }
}

/// Everything that determines a run, given the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub stream: StreamConfig,
    pub strategy: StrategyConfig,
    pub sgd: SgdConfig,
    pub pretrain_epochs: usize,
    pub task_epochs: usize,
    pub eval_batch: usize,
    pub frontend: FrontendConfig,
    pub model: ModelConfig,
    pub include_pretrain: bool,
    pub output_dir: Option<PathBuf>,
    pub checkpoints: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            corpus: CorpusConfig::Synth(SynthConfig::default()),
            stream: StreamConfig::default(),
            strategy: StrategyConfig::default(),
            sgd: SgdConfig::default(),
            pretrain_epochs: 30,
            task_epochs: 15,
            eval_batch: 256,
            frontend: FrontendConfig::default(),
            model: ModelConfig::default(),
            include_pretrain: true,
            output_dir: None,
            checkpoints: true,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("expected {what}, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(
            key,
            format!("expected true or false, got `{value}`"),
        )),
    }
}

fn with_line(e: Error, line: Option<usize>) -> Error {
    match e {
        Error::Config {
            field,
            line: None,
            message,
        } => Error::Config {
            field,
            line,
            message,
        },
        other => other,
    }
}

impl RunConfig {
    /// Keys accepted by [`RunConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "stream.source",
        "stream.corpus_dir",
        "stream.pretrain_keywords",
        "stream.tasks",
        "stream.keywords_per_task",
        "stream.test_fraction",
        "synth.keywords",
        "synth.clips",
        "synth.noise",
        "synth.freq_jitter",
        "strategy.name",
        "ewc.lambda",
        "si.lambda",
        "si.epsilon",
        "nr.xi",
        "gem.buffer",
        "pcl.mu",
        "pcl.fixed",
        "pcl.freeze_shared",
        "sgd.lr",
        "sgd.momentum",
        "sgd.weight_decay",
        "sgd.batch_size",
        "train.pretrain_epochs",
        "train.task_epochs",
        "train.eval_batch",
        "frontend.n_mfcc",
        "frontend.n_mel",
        "frontend.frame_length_ms",
        "frontend.frame_shift_ms",
        "frontend.pre_emphasis",
        "model.channels",
        "model.first_kernel",
        "model.kernel",
        "metrics.include_pretrain",
        "output.dir",
        "output.checkpoints",
    ];

    fn synth_mut(&mut self, key: &str) -> Result<&mut SynthConfig> {
        match &mut self.corpus {
            CorpusConfig::Synth(s) => Ok(s),
            CorpusConfig::Gsc { .. } => {
                Err(Error::config(key, "only valid with stream.source = synth"))
            }
        }
    }

    /// Sets one dotted key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_num(key, v, "an unsigned integer")?,
            "stream.source" => match v {
                "synth" => {
                    if !matches!(self.corpus, CorpusConfig::Synth(_)) {
                        self.corpus = CorpusConfig::Synth(SynthConfig::default());
                    }
                }
                "gsc" => {
                    if !matches!(self.corpus, CorpusConfig::Gsc { .. }) {
                        self.corpus = CorpusConfig::Gsc {
                            root: PathBuf::new(),
                        };
                    }
                }
                _ => {
                    return Err(Error::config(
                        key,
                        format!("expected synth or gsc, got `{v}`"),
                    ))
                }
            },
            "stream.corpus_dir" => {
                self.corpus = CorpusConfig::Gsc {
                    root: PathBuf::from(v),
                }
            }
            "stream.pretrain_keywords" => {
                self.stream.pretrain_keywords = parse_num(key, v, "an integer")?
            }
            "stream.tasks" => self.stream.n_tasks = parse_num(key, v, "an integer")?,
            "stream.keywords_per_task" => {
                self.stream.keywords_per_task = parse_num(key, v, "an integer")?
            }
            "stream.test_fraction" => self.stream.test_fraction = parse_num(key, v, "a number")?,
            "synth.keywords" => self.synth_mut(key)?.n_keywords = parse_num(key, v, "an integer")?,
            "synth.clips" => {
                self.synth_mut(key)?.clips_per_keyword = parse_num(key, v, "an integer")?
            }
            "synth.noise" => self.synth_mut(key)?.noise = parse_num(key, v, "a number")?,
            "synth.freq_jitter" => {
                self.synth_mut(key)?.freq_jitter = parse_num(key, v, "a number")?
            }
            "strategy.name" => self.strategy.kind = v.parse()?,
            "ewc.lambda" => self.strategy.ewc_lambda = parse_num(key, v, "a number")?,
            "si.lambda" => self.strategy.si_lambda = parse_num(key, v, "a number")?,
            "si.epsilon" => self.strategy.si_epsilon = parse_num(key, v, "a number")?,
            "nr.xi" => self.strategy.nr_xi = parse_num(key, v, "a number")?,
            "gem.buffer" => self.strategy.gem_buffer = parse_num(key, v, "an integer")?,
            "pcl.mu" => self.strategy.pcl_mu = parse_num(key, v, "a number")?,
            "pcl.fixed" => self.strategy.pcl_fixed = parse_bool(key, v)?,
            "pcl.freeze_shared" => self.strategy.pcl_freeze_shared = parse_bool(key, v)?,
            "sgd.lr" => self.sgd.learning_rate = parse_num(key, v, "a number")?,
            "sgd.momentum" => self.sgd.momentum = parse_num(key, v, "a number")?,
            "sgd.weight_decay" => self.sgd.weight_decay = parse_num(key, v, "a number")?,
            "sgd.batch_size" => self.sgd.batch_size = parse_num(key, v, "an integer")?,
            "train.pretrain_epochs" => self.pretrain_epochs = parse_num(key, v, "an integer")?,
            "train.task_epochs" => self.task_epochs = parse_num(key, v, "an integer")?,
            "train.eval_batch" => self.eval_batch = parse_num(key, v, "an integer")?,
            "frontend.n_mfcc" => self.frontend.n_mfcc = parse_num(key, v, "an integer")?,
            "frontend.n_mel" => self.frontend.n_mel = parse_num(key, v, "an integer")?,
            "frontend.frame_length_ms" => {
                self.frontend.frame_length_ms = parse_num(key, v, "a number")?
            }
            "frontend.frame_shift_ms" => {
                self.frontend.frame_shift_ms = parse_num(key, v, "a number")?
            }
            "frontend.pre_emphasis" => self.frontend.pre_emphasis = parse_num(key, v, "a number")?,
            "model.channels" => {
                let parts: Vec<usize> = v
                    .split(',')
                    .map(|p| parse_num(key, p, "a comma-separated list of 4 integers"))
                    .collect::<Result<_>>()?;
                self.model.channels = parts.try_into().map_err(|_| {
                    Error::config(key, format!("expected 4 channel counts, got `{v}`"))
                })?;
            }
            "model.first_kernel" => self.model.first_kernel = parse_num(key, v, "an integer")?,
            "model.kernel" => self.model.kernel = parse_num(key, v, "an integer")?,
            "metrics.include_pretrain" => self.include_pretrain = parse_bool(key, v)?,
            "output.dir" => self.output_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "output.checkpoints" => self.checkpoints = parse_bool(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.strategy.validate()?;
        self.sgd.validate()?;
        match &self.corpus {
            CorpusConfig::Synth(s) => s.validate()?,
            CorpusConfig::Gsc { root } if root.as_os_str().is_empty() => {
                return Err(Error::config(
                    "stream.corpus_dir",
                    "required when stream.source = gsc",
                ))
            }
            CorpusConfig::Gsc { .. } => {}
        }
        self.frontend
            .validate()
            .map_err(|e| Error::config("frontend", e.to_string()))?;
        if self.pretrain_epochs == 0 {
            return Err(Error::config("train.pretrain_epochs", "must be >= 1"));
        }
        if self.task_epochs == 0 {
            return Err(Error::config("train.task_epochs", "must be >= 1"));
        }
        if self.eval_batch == 0 {
            return Err(Error::config("train.eval_batch", "must be >= 1"));
        }
        if self.model.channels.contains(&0) {
            return Err(Error::config(
                "model.channels",
                "channel counts must be >= 1",
            ));
        }
        if self.model.first_kernel.is_multiple_of(2) || self.model.kernel.is_multiple_of(2) {
            return Err(Error::config("model.kernel", "kernel sizes must be odd"));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Later keys override
    /// earlier ones. Errors carry the offending line.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut lines: BTreeMap<String, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config {
                    field: line.to_string(),
                    line: Some(i + 1),
                    message: "expected `key = value`".into(),
                });
            };
            let k = k.trim();
            cfg.set(k, v).map_err(|e| with_line(e, Some(i + 1)))?;
            lines.insert(k.to_string(), i + 1);
        }
        cfg.validate().map_err(|e| match e {
            Error::Config {
                field,
                line: None,
                message,
            } => {
                let line = lines.get(&field).copied().or_else(|| {
                    lines
                        .iter()
                        .find(|(k, _)| k.starts_with(&format!("{field}.")))
                        .map(|(_, l)| *l)
                });
                Error::Config {
                    field,
                    line,
                    message,
                }
            }
            other => other,
        })?;
        Ok(cfg)
    }

    /// JSON alternative: nested objects flatten to dotted keys.
    pub fn parse_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let mut flat = Vec::new();
        flatten_json("", &value, &mut flat)?;
        let kv: String = flat
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        Self::parse_kv(&kv)
    }

    /// Reads either format; JSON is recognised by a leading `{`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            Self::parse_json(&text)
        } else {
            Self::parse_kv(&text)
        }
    }

    /// Canonical `key = value` rendering; `parse_kv(to_kv())` round-trips.
    pub fn to_kv(&self) -> String {
        let mut out = Vec::new();
        let mut put = |k: &str, v: String| out.push(format!("{k} = {v}"));
        put("seed", self.seed.to_string());
        match &self.corpus {
            CorpusConfig::Synth(s) => {
                put("stream.source", "synth".into());
                put("synth.keywords", s.n_keywords.to_string());
                put("synth.clips", s.clips_per_keyword.to_string());
                put("synth.noise", s.noise.to_string());
                put("synth.freq_jitter", s.freq_jitter.to_string());
            }
            CorpusConfig::Gsc { root } => {
                put("stream.source", "gsc".into());
                put("stream.corpus_dir", root.display().to_string());
            }
        }
        put(
            "stream.pretrain_keywords",
            self.stream.pretrain_keywords.to_string(),
        );
        put("stream.tasks", self.stream.n_tasks.to_string());
        put(
            "stream.keywords_per_task",
            self.stream.keywords_per_task.to_string(),
        );
        put(
            "stream.test_fraction",
            self.stream.test_fraction.to_string(),
        );
        let s = &self.strategy;
        put("strategy.name", s.kind.to_string());
        put("ewc.lambda", s.ewc_lambda.to_string());
        put("si.lambda", s.si_lambda.to_string());
        put("si.epsilon", s.si_epsilon.to_string());
        put("nr.xi", s.nr_xi.to_string());
        put("gem.buffer", s.gem_buffer.to_string());
        put("pcl.mu", s.pcl_mu.to_string());
        put("pcl.fixed", s.pcl_fixed.to_string());
        put("pcl.freeze_shared", s.pcl_freeze_shared.to_string());
        put("sgd.lr", self.sgd.learning_rate.to_string());
        put("sgd.momentum", self.sgd.momentum.to_string());
        put("sgd.weight_decay", self.sgd.weight_decay.to_string());
        put("sgd.batch_size", self.sgd.batch_size.to_string());
        put("train.pretrain_epochs", self.pretrain_epochs.to_string());
        put("train.task_epochs", self.task_epochs.to_string());
        put("train.eval_batch", self.eval_batch.to_string());
        put("frontend.n_mfcc", self.frontend.n_mfcc.to_string());
        put("frontend.n_mel", self.frontend.n_mel.to_string());
        put(
            "frontend.frame_length_ms",
            self.frontend.frame_length_ms.to_string(),
        );
        put(
            "frontend.frame_shift_ms",
            self.frontend.frame_shift_ms.to_string(),
        );
        put(
            "frontend.pre_emphasis",
            self.frontend.pre_emphasis.to_string(),
        );
        put(
            "model.channels",
            self.model
                .channels
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        put("model.first_kernel", self.model.first_kernel.to_string());
        put("model.kernel", self.model.kernel.to_string());
        put(
            "metrics.include_pretrain",
            self.include_pretrain.to_string(),
        );
        if let Some(d) = &self.output_dir {
            put("output.dir", d.display().to_string());
        }
        put("output.checkpoints", self.checkpoints.to_string());
        out.join("\n") + "\n"
    }

    /// Hash of everything that affects results (output settings excluded).
    pub fn hash(&self) -> String {
        let canon: String = self
            .to_kv()
            .lines()
            .filter(|l| !l.starts_with("output."))
            .map(|l| format!("{l}\n"))
            .collect();
        format!("{:016x}", fnv1a(canon.as_bytes()))
    }

    pub fn model_spec(&self, n_classes: usize, n_frames: usize) -> TcResNet8Spec {
        TcResNet8Spec {
            channels: self.model.channels,
            n_classes,
            n_mfcc: self.frontend.n_mfcc,
            n_frames,
            first_kernel: self.model.first_kernel,
            kernel: self.model.kernel,
        }
    }
}

fn flatten_json(
    prefix: &str,
    v: &serde_json::Value,
    out: &mut Vec<(String, String)>,
) -> Result<()> {
    use serde_json::Value;
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                flatten_json(&key(k), child, out)?;
            }
        }
        Value::Array(items) => {
            let parts: Vec<String> = items
                .iter()
                .map(|i| match i {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect();
            out.push((prefix.to_string(), parts.join(",")));
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => return Err(Error::config(prefix, "null is not a valid value")),
        other => out.push((prefix.to_string(), other.to_string())),
    }
    Ok(())
}
