use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use nomamec_core::harness::{Algorithm, ExperimentConfig, RunOptions, SweepConfig, SweepParam};
use nomamec_core::run_experiment;
use serde_json::json;

#[derive(Parser)]
#[command(name = "sim", version, about = "Run NOMA edge-computing offloading experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep one generation parameter, starting from an optional config.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// n_devices, n_subchannels, n_bs or mec_rate_scale.
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Number of seeds, counted up from 0.
        #[arg(long)]
        seeds: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Parse and check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Output directory; defaults to the config's output_dir, then `results`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Write one solution_*.json per cell.
    #[arg(long)]
    dump: bool,
    /// Restrict to these algorithms (comma separated).
    #[arg(long, value_delimiter = ',')]
    algo: Vec<Algorithm>,
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn execute(mut cfg: ExperimentConfig, common: Common) -> Result<serde_json::Value> {
    if !common.algo.is_empty() {
        cfg.algorithms = common.algo;
    }
    cfg.validate()?;
    let out = common.out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
    let opts = RunOptions { workers: common.workers, dump: common.dump };
    let table = run_experiment(&cfg, Some(&out), &opts)?;
    let failed = table.rows.iter().filter(|r| !r.is_ok()).count();
    Ok(json!({ "status": "ok", "rows": table.rows.len(), "failed_cells": failed, "out": out }))
}

fn dispatch(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Run { config, common } => execute(load(&config)?, common),
        Command::Sweep { config, param, values, seeds, common } => {
            let mut cfg = match &config {
                Some(path) => load(path)?,
                None => ExperimentConfig::default(),
            };
            cfg.sweep = Some(SweepConfig { parameter: param, values });
            if let Some(count) = seeds {
                cfg.seeds = nomamec_core::harness::Seeds::Range { count, base_seed: 0 };
            }
            execute(cfg, common)
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let (param, values) = cfg.sweep_points();
            let cells = values.len() * cfg.seeds.expand().len() * cfg.algorithms.len();
            Ok(json!({ "status": "ok", "sweep_param": param.name(), "sweep_values": values, "cells": cells }))
        }
    }
}

fn error_line(kind: &str, message: &str) -> String {
    json!({ "status": "error", "kind": kind, "error": message }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line("runtime", &format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
