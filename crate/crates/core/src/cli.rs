//! Command-line front end: `run`, `pair` and `export-trace`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::save_checkpoint;
use crate::config::ExperimentConfig;
use crate::engine::{
    pair_runs, run_experiment, run_experiment_with, CurveShiftSummary, RunOptions, RunReport,
    RunSummary,
};
use crate::error::{Error, Result};
use crate::output::write_steps_csv;
use crate::trace::write_trace;

pub const OUT_DIR_ENV: &str = "LNEDIT_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "lnedit",
    version,
    about = "Lifelong-normalized editing experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write steps.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value`, applied after the config file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, env = OUT_DIR_ENV)]
        out: PathBuf,
        /// Also write the final tracker state to <out>/state.json.
        #[arg(long)]
        save_state: bool,
    },
    /// Run a warm-started and a cold-started config and compare MSE curves.
    Pair {
        #[arg(long)]
        warm: PathBuf,
        #[arg(long)]
        cold: PathBuf,
        #[arg(long, env = OUT_DIR_ENV)]
        out: PathBuf,
    },
    /// Write every batch a config would draw as a trace CSV.
    ExportTrace {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical {
        context: "summary.json",
        detail: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_run(dir: &Path, report: &RunReport) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join("steps.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_steps_csv(std::io::BufWriter::new(file), &report.records)?;
    write_json(&dir.join("summary.json"), &report.summary)
}

fn load(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load_with_overrides(path, overrides)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct PairSummary<'a> {
    warm: &'a RunSummary,
    cold: &'a RunSummary,
    curve_shift: CurveShiftSummary,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            overrides,
            out,
            save_state,
        } => {
            let cfg = load(&config, &overrides, seed)?;
            let report = run_experiment(&cfg)?;
            write_run(&out, &report)?;
            if save_state {
                save_checkpoint(&report.final_state, &out.join("state.json"))?;
            }
            if let Some(path) = &cfg.checkpoint_out {
                save_checkpoint(&report.final_state, path)?;
            }
            Ok(())
        }
        Command::Pair { warm, cold, out } => {
            let warm_cfg = load(&warm, &[], None)?;
            let cold_cfg = load(&cold, &[], None)?;
            let (w, c, shift) = pair_runs(&warm_cfg, &cold_cfg)?;
            write_run(&out.join("warm"), &w)?;
            write_run(&out.join("cold"), &c)?;
            write_json(
                &out.join("summary.json"),
                &PairSummary {
                    warm: &w.summary,
                    cold: &c.summary,
                    curve_shift: (&shift).into(),
                },
            )
        }
        Command::ExportTrace { config, out } => {
            let cfg = load(&config, &[], None)?;
            let report = run_experiment_with(&cfg, RunOptions { keep_logs: true })?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            let file = fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
            write_trace(
                std::io::BufWriter::new(file),
                report.logs.iter().map(|l| &l.batch),
            )
        }
    }
}
