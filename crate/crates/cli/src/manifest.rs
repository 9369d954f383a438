//! Sweep manifests: one base config plus per-run overrides, all sharing
//! the stream and seed so their reports are comparable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kwscl_core::trainer::RunConfig;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    /// Where run directories and the comparison table are written.
    pub output_dir: Option<PathBuf>,
    /// Path to a base config file, resolved relative to the manifest.
    pub base_config: Option<PathBuf>,
    /// Inline base settings as dotted keys; applied after `base_config`.
    #[serde(default)]
    pub base: BTreeMap<String, serde_json::Value>,
    /// One entry per run; each maps dotted keys to values.
    pub runs: Vec<BTreeMap<String, serde_json::Value>>,
}

fn text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Array(items) => items.iter().map(text).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// Keys whose values must agree across a comparison.
fn shares_stream(key: &str) -> bool {
    key == "seed"
        || key.starts_with("stream.")
        || key.starts_with("synth.")
        || key.starts_with("frontend.")
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let mut m: ExperimentManifest = serde_json::from_str(&raw)
            .with_context(|| format!("parsing manifest {}", path.display()))?;
        if let Some(base) = &m.base_config {
            if base.is_relative() {
                m.base_config = Some(path.parent().unwrap_or(Path::new(".")).join(base));
            }
        }
        Ok(m)
    }

    /// Resolves every run into a validated config.
    pub fn configs(&self) -> Result<Vec<RunConfig>> {
        if self.runs.is_empty() {
            bail!("manifest lists no runs");
        }
        let mut base_kv = match &self.base_config {
            Some(p) => RunConfig::from_file(p)
                .with_context(|| format!("base config {}", p.display()))?
                .to_kv(),
            None => String::new(),
        };
        for (k, v) in &self.base {
            base_kv.push_str(&format!("{k} = {}\n", text(v)));
        }
        for (i, run) in self.runs.iter().enumerate() {
            if let Some(k) = run.keys().find(|k| shares_stream(k)) {
                bail!("run {i} overrides `{k}`; seed and stream settings must be shared by every run in a comparison");
            }
        }
        let mut out = Vec::with_capacity(self.runs.len());
        for (i, run) in self.runs.iter().enumerate() {
            let mut kv = base_kv.clone();
            for (k, v) in run {
                kv.push_str(&format!("{k} = {}\n", text(v)));
            }
            let cfg =
                RunConfig::parse_kv(&kv).with_context(|| format!("run {i} of the manifest"))?;
            out.push(cfg);
        }
        let first = &out[0];
        for (i, c) in out.iter().enumerate().skip(1) {
            if c.seed != first.seed {
                bail!(
                    "run {i} uses seed {} but run 0 uses seed {}; a comparison needs one seed",
                    c.seed,
                    first.seed
                );
            }
            if c.corpus != first.corpus || c.stream != first.stream || c.frontend != first.frontend
            {
                bail!("run {i} uses a different task stream than run 0");
            }
        }
        Ok(out)
    }
}
