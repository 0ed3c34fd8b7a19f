//! `lrnn`: experiment driver.
//!
//! Exit codes: 0 when the command's checks pass, 2 when a check fails,
//! 1 on any error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lrnn_core::config::Config;
use lrnn_core::experiments::{run_command, Command};

#[derive(Parser, Debug)]
#[command(name = "lrnn", version, about = "Linear RNN vs scaled convolution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a teacher-student dataset
    GenData(Common),
    /// Train the RNN and the convolutions from one initial impulse response
    TrainCompare(Common),
    /// Test error of all three models across target delays
    DelaySweep(Common),
    /// Empirical RNN kernel against its wide limit
    NtkCheck(Common),
    /// Norms of the initial impulse response across seeds
    ImpulseStats(Common),
    /// State-evolution predictions against finite-width simulation
    SeReport(Common),
    /// Validate a CSV sequence dataset and report its split
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; overrides `data_dir` in the config
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` config file; omitted keys take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (cmd, common, data) = match cli.command {
        Cmd::GenData(c) => (Command::GenData, c, None),
        Cmd::TrainCompare(c) => (Command::TrainCompare, c, None),
        Cmd::DelaySweep(c) => (Command::DelaySweep, c, None),
        Cmd::NtkCheck(c) => (Command::NtkCheck, c, None),
        Cmd::ImpulseStats(c) => (Command::ImpulseStats, c, None),
        Cmd::SeReport(c) => (Command::SeReport, c, None),
        Cmd::Ingest { common, data } => (Command::Ingest, common, data),
    };
    let mut config = match &common.config {
        Some(path) => Config::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => Config::default(),
    };
    if let Some(dir) = data {
        config.set("data_dir", dir.display());
    }
    let summary =
        run_command(cmd, &config, common.seed, &common.out).with_context(|| format!("{} failed", cmd.name()))?;
    for line in &summary.lines {
        println!("{line}");
    }
    println!("wrote {} to {}", summary.files.join(", "), common.out.display());
    println!("{}: {}", cmd.name(), if summary.passed { "PASS" } else { "FAIL" });
    Ok(summary.passed)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
