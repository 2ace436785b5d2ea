//! Batch front end: parses a run configuration, executes one scenario
//! family (simulate / slope / decay / propcheck / convergence), and writes
//! plot-ready CSV plus JSON summaries.
//!
//! Outputs are staged in a temporary sibling directory and renamed into
//! place on success, so a failed run never leaves partial files. All
//! floating-point output uses 17 significant digits; wall-clock timestamps
//! are confined to meta.json so repeated runs with the same config and
//! seed are byte-identical elsewhere.

mod config;
mod run;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "viscoflow", version, about = "Minimizing-movement solver and diagnostics")]
struct Cli {
    /// TOML run configuration; built-in reference defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (must not exist yet).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed override for sampled studies.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Time-step override.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Viscosity-exponent override.
    #[arg(long = "p-tilde", global = true)]
    p_tilde: Option<f64>,
    /// Parallel scenario jobs (reserved; runs are currently sequential).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run the minimizing-movement scheme plus trajectory diagnostics.
    Simulate,
    /// Compute the local slope at the scenario's initial state.
    Slope,
    /// Long-time decay runs (all three viscosity-exponent presets, or one
    /// chosen with --p-tilde).
    Decay,
    /// Sampled rigidity / Korn / a-priori property studies.
    Propcheck,
    /// Energy-dissipation-balance residuals under time-step refinement.
    Convergence,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = config::Overrides { seed: cli.seed, tau: cli.tau, p_tilde: cli.p_tilde };
    let cfg = match config::load(cli.config.as_deref(), &overrides) {
        Ok(cfg) => cfg,
        Err(err) => return fail(1, "validation", &err.to_string()),
    };
    let outcome = match cli.command {
        Command::Simulate => run::simulate(&cfg, &cli.out),
        Command::Slope => run::slope(&cfg, &cli.out),
        Command::Decay => run::decay(&cfg, &cli.out, overrides.p_tilde),
        Command::Propcheck => run::propcheck(&cfg, &cli.out),
        Command::Convergence => run::convergence(&cfg, &cli.out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(run::RunError::Validation(msg)) => fail(1, "validation", &msg),
        Err(run::RunError::Solver(msg)) => fail(2, "solver", &msg),
        Err(run::RunError::Property(msg)) => fail(3, "property", &msg),
        Err(run::RunError::Io(err)) => fail(2, "io", &err.to_string()),
    }
}

fn fail(code: u8, kind: &str, message: &str) -> ExitCode {
    eprintln!("viscoflow: {kind} error: {message}");
    println!(
        "{{\"error\":{{\"kind\":\"{kind}\",\"message\":\"{}\",\"exit_code\":{code}}}}}",
        message.replace('\\', "\\\\").replace('"', "\\\"")
    );
    ExitCode::from(code)
}
