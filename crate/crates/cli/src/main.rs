//! `qreg`: train, benchmark and inspect hybrid quantum regression models.
//!
//! Exit codes: 0 success, 1 other failure (I/O and the like), 2 invalid
//! configuration or input, 3 numerical abort during training (partial log
//! kept), 4 gradient check over tolerance. Only the summary JSON goes to
//! stdout; diagnostics and tables go to stderr.

mod artifacts;
mod benchmark;
mod config;
mod error;
mod export;
mod gradcheck;
mod provenance;
mod report;
mod runs;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use qreg_core::hybrid::ModelVariant;
use qreg_core::tasks::PdeBenchmark;

use crate::benchmark::Suite;
use crate::config::Loaded;
use crate::error::{exit, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "qreg", version, about = "Hybrid quantum regression experiments")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model per seed; writes run logs, checkpoints and error grids.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare variants (or optimizer arms) over seeds and folds.
    Benchmark {
        #[arg(value_enum)]
        suite: Suite,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Config whose `gradcheck` section is used; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<ModelVariant>,
        /// Flip the analytic gradient's sign (fault injection).
        #[arg(long)]
        corrupt_gradient_sign: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Dump a checkpoint's predictions on the dense evaluation grid as CSV.
    ExportGrid {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        benchmark: PdeBenchmark,
        #[arg(long, default_value_t = 100)]
        resolution: usize,
        /// CSV path; defaults to `grid-<benchmark>-<resolution>.csv` under the output root.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Render benchmark reports and summarize run logs.
    Report {
        /// `report.json` files or `runlog.ndjson` files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Write the tables here (with a provenance sidecar) instead of stderr.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok((summary, code)) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("qreg: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

fn load(path: &Path) -> CliResult<Loaded> {
    config::load(path)
}

fn dispatch(command: Command) -> CliResult<(Value, i32)> {
    match command {
        Command::Train { config, output } => {
            let loaded = load(&config)?;
            let out = config::output_dir(&loaded, output.as_deref());
            Ok((train::run(&loaded, &out)?, exit::OK))
        }
        Command::Benchmark { suite, config, output } => {
            let loaded = load(&config)?;
            let out = config::output_dir(&loaded, output.as_deref());
            Ok((benchmark::run(&loaded, suite, &out)?, exit::OK))
        }
        Command::Gradcheck { config, variant, corrupt_gradient_sign, output } => {
            let loaded = match &config {
                Some(path) => load(path)?,
                None => {
                    let mut l = config::from_value(serde_json::json!({}), Path::new("."))?;
                    l.name = "gradcheck".into();
                    l
                }
            };
            let mut g = loaded.config.gradcheck.clone();
            if let Some(v) = variant {
                g.variant = v;
            }
            g.corrupt_gradient_sign |= corrupt_gradient_sign;
            let out = config::output_dir(&loaded, output.as_deref());
            let (summary, passed) = gradcheck::run(&loaded, &g, &out)?;
            if !passed {
                let max = summary["max_relative_error"].as_f64().unwrap_or(f64::NAN);
                eprintln!("qreg: {}", CliError::Tolerance { max, tolerance: g.tolerance });
                return Ok((summary, exit::TOLERANCE));
            }
            Ok((summary, exit::OK))
        }
        Command::ExportGrid { checkpoint, benchmark, resolution, output } => {
            let csv = output.unwrap_or_else(|| PathBuf::from(format!("grid-{}-{resolution}.csv", benchmark.name())));
            let csv = config::under_root(csv);
            Ok((export::run(&checkpoint, benchmark, resolution, &csv)?, exit::OK))
        }
        Command::Report { inputs, output } => {
            let output = output.map(config::under_root);
            Ok((report::run(&inputs, output.as_deref())?, exit::OK))
        }
    }
}
