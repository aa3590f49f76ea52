//! Batch front end: config ingestion, experiment orchestration and CSV
//! emission for the kinetic steady-state and evolution laboratory.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use runner::Ctx;
use vfpk_core::solver::Mode;

#[derive(Parser)]
#[command(name = "vfpk", about = "Vlasov-Fokker-Planck numerical laboratory", version)]
struct Cli {
    /// Run configuration file (flat `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (defaults to `output.dir` from the config, then `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for every randomized check and perturbation (defaults to the
    /// config `seed` key, then 42).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress progress output.
    #[arg(long, global = true, default_value_t = false)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the steady-state fixed point and emit snapshot + convergence CSV.
    Steady,
    /// Solve (or load) a steady state, perturb, evolve the nonlinear equation.
    Evolve,
    /// Evolve the linearized equation around the steady state.
    Linear,
    /// Assemble the dense operator bundle and verify the algebraic identities.
    Diagnose,
    /// Witten spectral gaps and Poincare constants.
    Poincare,
    /// Cartesian parameter sweep with a manifest of outcomes.
    Sweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let mut cfg = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(runner::EXIT_CONFIG as u8);
            }
        },
        None => RunConfig::parse("").expect("empty config"),
    };

    // Flags win over config keys, which win over the built-in defaults.
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.raw("output.dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let seed = match cli.seed {
        Some(s) => {
            let _ = cfg.raw("seed");
            s
        }
        None => match cfg.raw("seed").map(|v| v.parse::<u64>()) {
            Some(Ok(s)) => s,
            Some(Err(_)) => {
                eprintln!("config error at `seed`: not an integer");
                return ExitCode::from(runner::EXIT_CONFIG as u8);
            }
            None => 42,
        },
    };
    let ctx = Ctx { out_dir, seed, quiet: cli.quiet };

    // Thread count: VFPK_THREADS caps sweep and intra-step parallelism only;
    // results are identical for any value.
    let threads = std::env::var("VFPK_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);

    let result = vfpk_core::exec::with_threads(threads, move || match cli.command {
        Command::Steady => runner::cmd_steady(cfg, &ctx),
        Command::Evolve => runner::cmd_evolve(cfg, &ctx, Mode::Nonlinear),
        Command::Linear => runner::cmd_evolve(cfg, &ctx, Mode::LinearizedAroundSteady),
        Command::Diagnose => runner::cmd_diagnose(cfg, &ctx),
        Command::Poincare => runner::cmd_poincare(cfg, &ctx),
        Command::Sweep => runner::cmd_sweep(cfg, &ctx),
    });

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("{msg}");
            ExitCode::from(code as u8)
        }
    }
}
