//! The sequential protocol: one pretraining task followed by incremental
//! tasks with disjoint keyword sets, built from a Speech-Commands style
//! corpus or from the synthetic generator.

mod gsc;
mod synth;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use gsc::{list_keywords, split_gsc};
pub use synth::{render_clip, synth_stream, write_synth_corpus, SynthConfig};

use crate::error::{Error, Result};
use crate::frontend::{pad_or_trim, read_wav, AudioClip, SAMPLE_RATE};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    /// Keywords of the pretraining task (`C_0`).
    pub pretrain_keywords: usize,
    /// Incremental tasks after pretraining (`T`).
    pub n_tasks: usize,
    pub keywords_per_task: usize,
    pub test_fraction: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            pretrain_keywords: 15,
            n_tasks: 5,
            keywords_per_task: 3,
            test_fraction: 0.2,
        }
    }
}

impl StreamConfig {
    pub fn keywords_needed(&self) -> usize {
        self.pretrain_keywords + self.n_tasks * self.keywords_per_task
    }

    pub fn validate(&self) -> Result<()> {
        if self.pretrain_keywords < 2 {
            return Err(Error::config("stream.pretrain_keywords", "must be >= 2"));
        }
        if self.n_tasks == 0 {
            return Err(Error::config("stream.tasks", "must be >= 1"));
        }
        if self.keywords_per_task < 2 {
            return Err(Error::config("stream.keywords_per_task", "must be >= 2"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config(
                "stream.test_fraction",
                format!("must be in (0, 1), got {}", self.test_fraction),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClipSource {
    /// Path relative to the corpus root.
    Wav {
        path: PathBuf,
    },
    Synth {
        keyword: usize,
        index: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRef {
    /// Label within the owning task.
    pub label: usize,
    pub source: ClipSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub keywords: Vec<String>,
    pub train: Vec<ClipRef>,
    pub test: Vec<ClipRef>,
    pub is_pretrain: bool,
}

impl TaskSpec {
    pub fn n_classes(&self) -> usize {
        self.keywords.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamSource {
    Gsc { root: PathBuf },
    Synth(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub seed: u64,
    pub source: StreamSource,
    pub config: StreamConfig,
    pub tasks: Vec<TaskSpec>,
}

impl TaskStream {
    pub fn pretrain(&self) -> &TaskSpec {
        &self.tasks[0]
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Decodes (or renders) one clip at one second, 16 kHz.
    pub fn load_clip(&self, clip: &ClipRef) -> Result<AudioClip> {
        match (&self.source, &clip.source) {
            (StreamSource::Gsc { root }, ClipSource::Wav { path }) => {
                let full = root.join(path);
                let audio = read_wav(&full, clip.label)
                    .map_err(|e| Error::Corpus(format!("{}: {e}", full.display())))?;
                pad_or_trim(&audio, SAMPLE_RATE as usize)
            }
            (StreamSource::Synth(cfg), ClipSource::Synth { keyword, index }) => {
                let samples = render_clip(cfg, self.seed, *keyword, *index);
                Ok(AudioClip::new(
                    samples,
                    clip.label,
                    synth::clip_path(cfg, *keyword, *index),
                ))
            }
            _ => Err(Error::Corpus(
                "clip reference does not match the stream source".into(),
            )),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Seeded choice of the stream's keywords: the first `C_0` after a shuffle
/// form the pretraining task, the following ones are grouped into tasks.
pub(crate) fn partition_keywords(
    names: &[String],
    seed: u64,
    cfg: &StreamConfig,
) -> Result<Vec<Vec<String>>> {
    cfg.validate()?;
    let need = cfg.keywords_needed();
    if names.len() < need {
        return Err(Error::Corpus(format!(
            "the stream needs {need} keywords but the corpus has {}",
            names.len()
        )));
    }
    let mut sorted = names.to_vec();
    sorted.sort();
    sorted.shuffle(&mut rng_for(seed, "stream/keywords"));
    let mut groups = vec![sorted[..cfg.pretrain_keywords].to_vec()];
    for t in 0..cfg.n_tasks {
        let start = cfg.pretrain_keywords + t * cfg.keywords_per_task;
        groups.push(sorted[start..start + cfg.keywords_per_task].to_vec());
    }
    Ok(groups)
}

/// Splits one keyword's clips into (train, test) by ranking them on a
/// seeded hash of their relative path; the lowest `round(fraction * n)`
/// go to test. Independent of listing order.
pub(crate) fn split_clips<T: Clone>(
    clips: &[(String, T)],
    seed: u64,
    test_fraction: f64,
) -> (Vec<T>, Vec<T>) {
    let mut ranked: Vec<(u64, &String, &T)> = clips
        .iter()
        .map(|(p, c)| (derive_seed(seed, &format!("split/{p}")), p, c))
        .collect();
    ranked.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let n_test = (test_fraction * clips.len() as f64).round() as usize;
    let test = ranked[..n_test].iter().map(|r| r.2.clone()).collect();
    let train = ranked[n_test..].iter().map(|r| r.2.clone()).collect();
    (train, test)
}

/// Assembles tasks from per-keyword clip lists given as `(relative path, source)`.
pub(crate) fn assemble<F>(
    groups: &[Vec<String>],
    seed: u64,
    cfg: &StreamConfig,
    mut clips_of: F,
) -> Result<Vec<TaskSpec>>
where
    F: FnMut(&str) -> Result<Vec<(String, ClipSource)>>,
{
    let mut tasks = Vec::with_capacity(groups.len());
    for (t, keywords) in groups.iter().enumerate() {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (label, kw) in keywords.iter().enumerate() {
            let clips = clips_of(kw)?;
            if clips.is_empty() {
                return Err(Error::Corpus(format!("keyword `{kw}` has no clips")));
            }
            let (tr, te) = split_clips(&clips, seed, cfg.test_fraction);
            train.extend(tr.into_iter().map(|source| ClipRef { label, source }));
            test.extend(te.into_iter().map(|source| ClipRef { label, source }));
        }
        tasks.push(TaskSpec {
            task_id: t,
            keywords: keywords.clone(),
            train,
            test,
            is_pretrain: t == 0,
        });
    }
    Ok(tasks)
}
