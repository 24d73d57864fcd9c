//! Library behind the `miaod` binary: configuration, commands and CSV I/O.

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use miaod_core::activeloop::Strategy;

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "miaod", about = "Active learning for object detection on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the train and test splits into --out.
    Generate(CommonArgs),
    /// Run every active learning cycle of one configuration.
    Run(CommonArgs),
    /// Run the Cartesian grid of the [sweep] section.
    Sweep(CommonArgs),
    /// Summarize metrics or sweep CSVs across seeds.
    Report {
        /// Input CSV files.
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Write the summary CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
}

impl CommonArgs {
    /// Loads the config file and applies the flag overrides, then revalidates.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        cfg.apply(&Overrides {
            seed: self.seed,
            strategy: self.strategy,
            lambda: self.lambda,
            k: self.k,
            dataset: self.dataset.clone(),
            out: self.out.clone(),
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Executes a parsed command, returning what should be printed on stdout.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Generate(a) => {
            let cfg = a.resolve()?;
            let out = cfg.paths.out.clone().ok_or_else(|| CliError::Config("generate needs --out".into()))?;
            let g = commands::cmd_generate(&cfg, &out)?;
            Ok(format!(
                "train {} images checksum {}\ntest {} images checksum {}\n",
                cfg.data.train_count, g.train_checksum, cfg.data.test_count, g.test_checksum
            ))
        }
        Command::Run(a) => {
            let rows = commands::cmd_run(&a.resolve()?)?;
            let last = rows.last().map(|r| format!(" final mAP {}", metrics::fmt_f(r.map))).unwrap_or_default();
            Ok(format!("{} cycles{last}\n", rows.len()))
        }
        Command::Sweep(a) => {
            let outcome = commands::cmd_sweep(&a.resolve()?)?;
            let mut text = format!("{} cells, {} failed\n", outcome.cells, outcome.failures.len());
            for f in &outcome.failures {
                text.push_str(&format!("failed {} (exit {}): {}\n", f.cell, f.exit_code, f.message));
            }
            match outcome.failures.first() {
                Some(f) => Err(CliError::SweepFailed { summary: text, exit_code: f.exit_code }),
                None => Ok(text),
            }
        }
        Command::Report { csv, out } => report::cmd_report(csv, out.as_deref()),
    }
}
