use archrank::experiments::{self, ExperimentConfig, ExperimentKind};
use archrank::threshold::compute_threshold;
use archrank::{Error, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Architecture ranking workbench.
#[derive(Parser)]
#[command(name = "archrank", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (or file, for gen-data); overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel jobs; defaults to the number of cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the configured dataset to a binary file.
    GenData,
    /// Learn the threshold accuracy for the configured dataset.
    Threshold,
    /// Build or extend the ground-truth store for the pool.
    GroundTruth,
    /// Compare FEAR, the shortreg sweep and zero-cost proxies by bin.
    RankCompare,
    /// Epochs to threshold against ground-truth accuracy.
    TimeToThreshold,
    /// Zero-cost proxies re-evaluated after each training epoch.
    ZcEpochs,
    /// Proxies and FEAR on the synthetic dataset.
    SyntheticZc,
    /// Random search with FEAR against random search with shortreg.
    SearchCompare,
    /// Plot-ready cost/correlation CSV from a finished rank-compare run.
    PlotData,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> Result<PathBuf> {
    cli.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run_kind(cli: &Cli, kind: ExperimentKind, workers: usize) -> Result<()> {
    let mut cfg = load_config(cli)?;
    cfg.kind = kind;
    let out = out_dir(cli, &cfg)?;
    let report = experiments::run(&cfg, &out, workers)?;
    print_json(&serde_json::json!({ "files": report.files, "results": report.summary["results"] }))
}

fn run(cli: &Cli) -> Result<()> {
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match cli.command {
        Command::GenData => {
            let cfg = load_config(cli)?;
            let out = cli
                .out
                .clone()
                .ok_or_else(|| Error::Config("gen-data needs --out <file>".into()))?;
            let ds = cfg.dataset.build(cfg.data_seed)?;
            ds.save(&out)?;
            print_json(&serde_json::json!({
                "file": out,
                "name": ds.name,
                "samples": ds.len(),
                "train": ds.train().len(),
                "test": ds.test().len(),
                "class_counts": ds.class_counts(),
            }))
        }
        Command::Threshold => {
            let cfg = load_config(cli)?;
            let ds = cfg.dataset.build(cfg.data_seed)?.normalize()?;
            let report = compute_threshold(&ds, &cfg.threshold_learner())?;
            if let Some(dir) = cli.out.as_deref() {
                write_json(dir, "threshold.json", &report)?;
            }
            print_json(&report)
        }
        Command::GroundTruth => run_kind(cli, ExperimentKind::GroundTruthBuild, workers),
        Command::RankCompare => run_kind(cli, ExperimentKind::RankCompare, workers),
        Command::TimeToThreshold => run_kind(cli, ExperimentKind::TimeToThreshold, workers),
        Command::ZcEpochs => run_kind(cli, ExperimentKind::ZeroCostOverEpochs, workers),
        Command::SyntheticZc => run_kind(cli, ExperimentKind::SyntheticZeroCost, workers),
        Command::SearchCompare => run_kind(cli, ExperimentKind::RandomSearchCompare, workers),
        Command::PlotData => {
            let dir = match (&cli.out, &cli.config) {
                (Some(d), _) => d.clone(),
                (None, Some(_)) => out_dir(cli, &load_config(cli)?)?,
                (None, None) => return Err(Error::Config("plot-data needs --out <run dir> or --config".into())),
            };
            let file = experiments::plot_data(&dir)?;
            print_json(&serde_json::json!({ "file": file }))
        }
    }
}

fn write_json(dir: &Path, name: &str, v: &impl serde::Serialize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v)? + "\n").map_err(|e| Error::Io { path, source: e })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{err}");
            ExitCode::from(2)
        }
    }
}
