//! Experiment runner for the mixed-precision multilevel Monte Carlo
//! laboratory.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure,
//! 4 level cap exceeded.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, Context};
use config::ExperimentConfig;
use mpml::engine::Workers;

#[derive(Parser)]
#[command(name = "mpml", version, about = "Mixed-precision multilevel Monte Carlo experiments")]
struct Cli {
    /// Flat key=value experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides `master_seed` from the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Output directory for CSV/JSON artifacts.
    #[arg(long, global = true, default_value = "mpml-out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective-precision schedule table.
    Schedule,
    /// Variance/bias decay against solver accuracy, per level.
    Decay,
    /// Replicated MLMC vs MPML experiment: MSE, cost gains, samples.
    Run,
    /// Residual history of one iterative-refinement solve.
    IrTrace,
    /// Per-level FLOP/memory ledger for one run of each method.
    CostReport,
    /// Matrix market export of one assembled system.
    DumpSystem,
    /// Compute and cache the high-accuracy reference estimate.
    ReferenceQoi,
}

fn build_context(cli: &Cli) -> Result<Context, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(|e| CliError::Config(e.0))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    Ok(Context {
        cfg,
        out: cli.out.clone(),
        workers: Workers::new(cli.workers),
    })
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let ctx = build_context(cli)?;
    match cli.command {
        Command::Schedule => commands::cmd_schedule(&ctx),
        Command::Decay => commands::cmd_decay(&ctx),
        Command::Run => commands::cmd_run(&ctx),
        Command::IrTrace => commands::cmd_ir_trace(&ctx),
        Command::CostReport => commands::cmd_cost_report(&ctx),
        Command::DumpSystem => commands::cmd_dump_system(&ctx),
        Command::ReferenceQoi => commands::cmd_reference_qoi(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
