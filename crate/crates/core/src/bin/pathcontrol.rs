//! Command-line entry point. Errors are printed to stderr as a single
//! flat key-value line (`error = "..."`) and exit with status 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pathcontrol::cli;
use pathcontrol::config::{ExperimentConfig, MethodChoice};
use pathcontrol::error::Result;

#[derive(Parser)]
#[command(name = "pathcontrol", version, about = "Controlled path-dependent SDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key-value config file (TOML syntax)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory
    #[arg(long)]
    out: Option<String>,
    /// Override the method (tree|mc|both)
    #[arg(long)]
    method: Option<String>,
    /// Worker threads (0 = library default)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an ensemble under the fixed control
    Simulate(Common),
    /// Estimate the value function
    Value(Common),
    /// Dynamic-programming residual at a split or stopping rule
    Dpp(Common),
    /// Upper/lower G-expectation for the volatility band
    Gexp(Common),
    /// 2BSDE decomposition under the fixed control
    Bsde(Common),
    /// Repeat the value pipeline along a parameter axis
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Config key to vary
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Validate and echo a config without running anything
    Report(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(method) = &common.method {
        cfg.method = MethodChoice::parse(method)?;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    if cfg.threads > 0 {
        // ignore failure: the global pool may already exist in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    Ok(cfg)
}

fn dispatch(command: &Command) -> Result<String> {
    let report = match command {
        Command::Simulate(c) => cli::run_simulate(&load(c)?)?,
        Command::Value(c) => cli::run_value(&load(c)?)?,
        Command::Dpp(c) => cli::run_dpp(&load(c)?)?,
        Command::Gexp(c) => cli::run_gexp(&load(c)?)?,
        Command::Bsde(c) => cli::run_bsde(&load(c)?)?,
        Command::Sweep { common, axis, values } => cli::run_sweep(&load(common)?, axis, values)?,
        Command::Report(c) => cli::run_report(&load(c)?)?,
    };
    Ok(report.render())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error = {:?}", e.to_string());
            ExitCode::FAILURE
        }
    }
}
