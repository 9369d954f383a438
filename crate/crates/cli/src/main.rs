mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use kwscl_core::metrics::{compare, read_report, render_csv, render_table, RunReport};
use kwscl_core::models::{
    describe_subnet, format_layer_table, scale_channels, subnet_spec, LayerRow, ScalingConfig,
    SubNetSpec, TcResNet8Spec, SUBNET_BASE_CHANNELS,
};
use kwscl_core::taskstream::{write_synth_corpus, SynthConfig};
use kwscl_core::trainer::{build_stream, prepare_data, run_prepared, RunConfig};
use rayon::prelude::*;

use crate::manifest::ExperimentManifest;

#[derive(Parser)]
#[command(
    name = "kwscl",
    version,
    about = "Continual-learning experiments for keyword spotting"
)]
struct Cli {
    /// Root for run outputs when a config does not set `output.dir`.
    #[arg(long, global = true, env = "KWSCL_OUTPUT", default_value = "runs")]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one strategy through the whole task stream.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every entry of a manifest and print the comparison table.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-render stored reports (one run directory or a sweep directory).
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Write the synthetic corpus as WAV files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        keywords: usize,
        #[arg(long, default_value_t = 40)]
        clips: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the layer table of a model.
    Describe {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        classes: usize,
        /// Width multiplier for a sub-network; defaults to classes / 15.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Tcresnet8,
    Subnet,
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

fn cmd_run(config: &Path, root: &Path) -> Result<()> {
    let mut cfg =
        RunConfig::from_file(config).with_context(|| format!("config {}", config.display()))?;
    if cfg.output_dir.is_none() {
        cfg.output_dir = Some(root.join(format!("{}-seed{}", cfg.strategy.kind, cfg.seed)));
    }
    let stream = build_stream(&cfg)?;
    let data = prepare_data(&stream, &cfg.frontend)?;
    let outcome = run_prepared(&cfg, &stream, &data)?;
    let rows = compare(std::slice::from_ref(&outcome.report))?;
    print!("{}", render_table(&rows));
    println!(
        "report written to {}",
        cfg.output_dir.as_ref().expect("set above").display()
    );
    Ok(())
}

fn write_comparison(dir: &Path, reports: &[RunReport]) -> Result<String> {
    let rows = compare(reports)?;
    let table = render_table(&rows);
    std::fs::write(dir.join("comparison.txt"), &table)?;
    std::fs::write(dir.join("comparison.csv"), render_csv(&rows))?;
    std::fs::write(
        dir.join("comparison.json"),
        serde_json::to_string_pretty(&rows)?,
    )?;
    Ok(table)
}

fn cmd_sweep(manifest: &Path, jobs: usize, root: &Path) -> Result<()> {
    let m = ExperimentManifest::load(manifest)?;
    let mut configs = m.configs()?;
    let out = m.output_dir.clone().unwrap_or_else(|| root.join("sweep"));
    std::fs::create_dir_all(&out)?;
    let stream = build_stream(&configs[0])?;
    let data = prepare_data(&stream, &configs[0].frontend)?;
    for (i, c) in configs.iter_mut().enumerate() {
        let label = c.strategy.label();
        c.output_dir = Some(out.join(format!("{i:02}-{}", slug(&label))));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?;
    let reports: Vec<RunReport> = pool.install(|| {
        configs
            .par_iter()
            .map(|c| {
                log::info!(
                    "starting {}",
                    c.output_dir.as_ref().expect("set above").display()
                );
                run_prepared(c, &stream, &data).map(|o| o.report)
            })
            .collect::<kwscl_core::Result<Vec<_>>>()
    })?;
    print!("{}", write_comparison(&out, &reports)?);
    Ok(())
}

fn collect_reports(dir: &Path) -> Result<Vec<RunReport>> {
    if dir.join("report.json").is_file() {
        return Ok(vec![read_report(dir)?]);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("report.json").is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        bail!("no report.json under {}", dir.display());
    }
    subdirs
        .iter()
        .map(|d| read_report(d).with_context(|| format!("report in {}", d.display())))
        .collect()
}

fn cmd_report(dir: &Path, format: Format) -> Result<()> {
    let reports = collect_reports(dir)?;
    let rows = compare(&reports)?;
    match format {
        Format::Table => print!("{}", render_table(&rows)),
        Format::Csv => print!("{}", render_csv(&rows)),
        Format::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
    }
    Ok(())
}

fn cmd_synth(out: &Path, keywords: usize, clips: usize, seed: u64) -> Result<()> {
    let cfg = SynthConfig {
        n_keywords: keywords,
        clips_per_keyword: clips,
        ..SynthConfig::default()
    };
    let n = write_synth_corpus(&cfg, seed, out)?;
    println!("wrote {n} clips to {}", out.display());
    Ok(())
}

fn cmd_describe(model: ModelKind, classes: usize, alpha: Option<f64>, json: bool) -> Result<()> {
    let base = TcResNet8Spec::default();
    let rows: Vec<LayerRow> = match model {
        ModelKind::Tcresnet8 => {
            let spec = TcResNet8Spec {
                n_classes: classes,
                ..base
            };
            kwscl_core::models::describe_tcresnet8(&spec, 0)?
        }
        ModelKind::Subnet => {
            let spec = match alpha {
                Some(a) => {
                    if !(a > 0.0 && a.is_finite()) {
                        bail!("--alpha must be > 0, got {a}");
                    }
                    let (c1, k1) = scale_channels(SUBNET_BASE_CHANNELS[0], a);
                    let (c2, k2) = scale_channels(SUBNET_BASE_CHANNELS[1], a);
                    SubNetSpec {
                        base_channels: SUBNET_BASE_CHANNELS,
                        alpha: a,
                        n_classes: classes,
                        scaled_channels: [c1, c2],
                        in_channels: base.stem_channels(),
                        kernel: base.kernel,
                        clamped: k1 || k2,
                    }
                }
                None => subnet_spec(
                    classes,
                    &ScalingConfig::default(),
                    false,
                    base.stem_channels(),
                    base.kernel,
                )?,
            };
            let frames = base.n_frames.div_ceil(2);
            describe_subnet(&spec, frames, 0)?
        }
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print!("{}", format_layer_table(&rows));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config, &cli.output_root),
        Command::Sweep { manifest, jobs } => cmd_sweep(manifest, *jobs, &cli.output_root),
        Command::Report { dir, format } => cmd_report(dir, *format),
        Command::Synth {
            out,
            keywords,
            clips,
            seed,
        } => cmd_synth(out, *keywords, *clips, *seed),
        Command::Describe {
            model,
            classes,
            alpha,
            json,
        } => cmd_describe(*model, *classes, *alpha, *json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
