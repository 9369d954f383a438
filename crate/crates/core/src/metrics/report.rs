use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::{acc_curve, acc_with, bwt_with, la_with, AccuracyMatrix};
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// ACC / LA / BWT under one averaging convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub acc: f64,
    pub la: f64,
    pub bwt: f64,
}

impl Summary {
    pub fn from_matrix(r: &AccuracyMatrix, include_pretrain: bool) -> Result<Self> {
        Ok(Summary {
            acc: acc_with(r, include_pretrain)?,
            la: la_with(r, include_pretrain)?,
            bwt: bwt_with(r, include_pretrain)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// Strategy identifier (`gem`) and table label (`GEM-128`).
    pub strategy: String,
    pub label: String,
    pub seed: u64,
    /// Hash of the canonical run config.
    pub config_hash: String,
    /// Hash of the task stream manifest; runs are comparable iff it matches.
    pub stream_hash: String,
    pub keywords_per_task: Vec<usize>,
    /// Lower-triangular `R`, `accuracy[t][k]` for `k <= t`.
    pub accuracy: Vec<Vec<f64>>,
    /// Headline metrics, averaged as selected by `pretrain_included`.
    pub acc: f64,
    pub la: f64,
    pub bwt: f64,
    pub pretrain_included: bool,
    pub with_pretrain: Summary,
    pub without_pretrain: Summary,
    /// ACC minus the fine-tune ACC of the same stream and seed, when known.
    pub acc_plus: Option<f64>,
    /// ACC after each learned task (one entry per task, pretraining first).
    pub acc_curve: Vec<f64>,
    pub base_params: usize,
    pub extra_params: usize,
    /// Extra parameters after each learned task.
    pub extra_params_series: Vec<usize>,
    pub buffer_bytes: usize,
    /// Mean training loss (task loss plus penalty) of each task's last epoch.
    pub final_train_loss: Vec<f64>,
    /// Wall-clock seconds of every training epoch, per task.
    pub epoch_seconds: Vec<Vec<f64>>,
    /// Mean seconds per incremental-task epoch.
    pub tt_seconds: f64,
    pub warnings: Vec<String>,
}

impl RunReport {
    /// Copy with every timing field zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.epoch_seconds = r.epoch_seconds.iter().map(|e| vec![0.0; e.len()]).collect();
        r.tt_seconds = 0.0;
        r
    }

    pub fn matrix(&self) -> Result<AccuracyMatrix> {
        AccuracyMatrix::from_rows(&self.accuracy)
    }

    pub fn n_tasks(&self) -> usize {
        self.accuracy.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: RunReport = serde_json::from_str(s)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "report schema version {} is not supported (expected {REPORT_SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        Ok(r)
    }
}

/// Writes `report.json`, `accuracy_matrix.csv`, `acc_curve.csv` and
/// `extra_params.csv` into `dir`, creating it if needed.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    std::fs::write(dir.join("accuracy_matrix.csv"), report.matrix()?.to_csv())?;

    let mut curve = String::from("learned_tasks,acc\n");
    for (t, a) in report.acc_curve.iter().enumerate() {
        curve.push_str(&format!("{},{a}\n", t + 1));
    }
    std::fs::write(dir.join("acc_curve.csv"), curve)?;

    let mut extra = String::from("learned_tasks,extra_params,acc\n");
    for (t, (p, a)) in report
        .extra_params_series
        .iter()
        .zip(&report.acc_curve)
        .enumerate()
    {
        extra.push_str(&format!("{},{p},{a}\n", t + 1));
    }
    std::fs::write(dir.join("extra_params.csv"), extra)?;
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<RunReport> {
    RunReport::from_json(&std::fs::read_to_string(dir.join("report.json"))?)
}

/// Assembles a report from a finished matrix.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    strategy: &str,
    label: &str,
    seed: u64,
    config_hash: String,
    stream_hash: String,
    keywords_per_task: Vec<usize>,
    matrix: &AccuracyMatrix,
    include_pretrain: bool,
    base_params: usize,
    extra_params_series: Vec<usize>,
    buffer_bytes: usize,
    final_train_loss: Vec<f64>,
    epoch_seconds: Vec<Vec<f64>>,
    warnings: Vec<String>,
) -> Result<RunReport> {
    let with_pretrain = Summary::from_matrix(matrix, true)?;
    let without_pretrain = Summary::from_matrix(matrix, false)?;
    let head = if include_pretrain {
        with_pretrain
    } else {
        without_pretrain
    };
    let accuracy = (0..matrix.n_tasks())
        .map(|t| {
            (0..=t)
                .map(|k| matrix.get(t, k))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let incremental: Vec<f64> = epoch_seconds.iter().skip(1).flatten().copied().collect();
    let tt_seconds = if incremental.is_empty() {
        0.0
    } else {
        incremental.iter().sum::<f64>() / incremental.len() as f64
    };
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        strategy: strategy.to_string(),
        label: label.to_string(),
        seed,
        config_hash,
        stream_hash,
        keywords_per_task,
        accuracy,
        acc: head.acc,
        la: head.la,
        bwt: head.bwt,
        pretrain_included: include_pretrain,
        with_pretrain,
        without_pretrain,
        acc_plus: None,
        acc_curve: acc_curve(matrix)?,
        base_params,
        extra_params: extra_params_series.last().copied().unwrap_or(0),
        extra_params_series,
        buffer_bytes,
        final_train_loss,
        epoch_seconds,
        tt_seconds,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub strategy: String,
    pub acc: f64,
    pub la: f64,
    pub bwt: f64,
    pub acc_plus: Option<f64>,
    pub tt_seconds: f64,
    pub extra_params: usize,
    pub buffer_bytes: usize,
}

/// One row per report, with ACC+ taken against the fine-tune report. All
/// reports must share the stream and seed.
pub fn compare(reports: &[RunReport]) -> Result<Vec<ComparisonRow>> {
    let Some(first) = reports.first() else {
        return Ok(Vec::new());
    };
    for r in reports {
        if r.seed != first.seed {
            return Err(Error::config(
                "seed",
                format!(
                    "runs `{}` and `{}` use different seeds ({} vs {})",
                    first.label, r.label, first.seed, r.seed
                ),
            ));
        }
        if r.stream_hash != first.stream_hash {
            return Err(Error::config(
                "stream",
                format!(
                    "runs `{}` and `{}` were trained on different task streams",
                    first.label, r.label
                ),
            ));
        }
    }
    let finetune = reports
        .iter()
        .find(|r| r.strategy == "fine-tune")
        .map(|r| r.acc);
    Ok(reports
        .iter()
        .map(|r| ComparisonRow {
            label: r.label.clone(),
            strategy: r.strategy.clone(),
            acc: r.acc,
            la: r.la,
            bwt: r.bwt,
            acc_plus: finetune.map(|f| r.acc - f),
            tt_seconds: r.tt_seconds,
            extra_params: r.extra_params,
            buffer_bytes: r.buffer_bytes,
        })
        .collect())
}

pub fn render_table(rows: &[ComparisonRow]) -> String {
    let mut out = format!(
        "{:<22} {:>7} {:>7} {:>8} {:>8} {:>9} {:>12} {:>12}\n",
        "strategy", "ACC", "LA", "BWT", "ACC+", "TT(s)", "ExtraParam", "Buffer(B)"
    );
    for r in rows {
        let plus = r
            .acc_plus
            .map(|p| format!("{p:.3}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<22} {:>7.3} {:>7.3} {:>8.3} {:>8} {:>9.3} {:>12} {:>12}\n",
            r.label, r.acc, r.la, r.bwt, plus, r.tt_seconds, r.extra_params, r.buffer_bytes
        ));
    }
    out
}

pub fn render_csv(rows: &[ComparisonRow]) -> String {
    let mut out =
        String::from("strategy,label,acc,la,bwt,acc_plus,tt_seconds,extra_params,buffer_bytes\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.strategy,
            r.label,
            r.acc,
            r.la,
            r.bwt,
            r.acc_plus.map(|p| p.to_string()).unwrap_or_default(),
            r.tt_seconds,
            r.extra_params,
            r.buffer_bytes
        ));
    }
    out
}
