//! `ordinal-causal`: estimation, sensitivity curves, Gamma analysis and
//! simulation studies for ordinal treatment effects.
//!
//! Exit codes: 0 ok, 2 configuration or input error, 3 model-fit failure,
//! 4 numeric failure.

mod commands;
mod config;
mod error;
mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Context, Overrides};
use config::{AnalysisConfig, Command, Format};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "ordinal-causal", version, about = "Copula-based causal estimands for ordinal outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Analysis configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Input CSV; overrides the config's `input`.
    #[arg(long, global = true)]
    input: Option<PathBuf>,

    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 or unset uses all cores.
    #[arg(long, global = true, env = "ORDINAL_CAUSAL_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Point estimates with influence-function intervals.
    Estimate,
    /// Estimates along a Kendall's tau grid with the coupling envelope.
    Curve,
    /// Endpoint bounds over a Gamma grid and the breakeven Gamma.
    Gamma,
    /// Replication study on a simulated design.
    Simulate,
}

fn run(cli: Cli) -> CliResult<()> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = AnalysisConfig::load(&path)?;
    let cmd = match cli.command {
        Cmd::Estimate => Command::Estimate,
        Cmd::Curve => Command::Curve,
        Cmd::Gamma => Command::Gamma,
        Cmd::Simulate => Command::Simulate,
    };
    cfg.validate(cmd)?;

    if let Some(t) = cli.threads.filter(|&t| t > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }

    let ctx = Context::new(cfg, Overrides { input: cli.input, out: cli.out, format: cli.format, seed: cli.seed });
    let artifacts = match cmd {
        Command::Estimate => commands::estimate_cmd(&ctx)?,
        Command::Curve => commands::curve_cmd(&ctx)?,
        Command::Gamma => commands::gamma_cmd(&ctx)?,
        Command::Simulate => commands::simulate_cmd(&ctx)?,
    };
    for a in artifacts {
        output::emit(a.path.as_deref(), &a.bytes)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
