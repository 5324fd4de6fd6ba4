//! Configuration-driven experiment runner.
//!
//! Every subcommand reads one TOML config (overridable with
//! `--set section.key=value`), writes its outputs into the configured
//! directory stamped with the config hash and seed, and prints a one-line
//! summary. Exit codes: 0 success, 1 validation error, 2 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    fn from_core(e: fluxldp_core::Error) -> Self {
        use fluxldp_core::Error as E;
        match e {
            E::NonConvergence { .. } | E::RateBoundExceeded { .. } => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "validation error: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "fluxldp",
    about = "Simulation and Hamilton-Jacobi diagnostics for measure/flux pairs of interacting jump processes"
)]
struct Cli {
    /// Experiment configuration file.
    #[arg(long, short, global = true, default_value = "fluxldp.toml")]
    config: PathBuf,

    /// Override a config entry, e.g. --set simulation.seed=7 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate one n-particle path and write its event log and trajectory.
    Simulate,
    /// Gap between empirical trajectories and the mean-field flow over n.
    Lln,
    /// Cross-check the Lagrangian against the numerical Legendre transform.
    RateEval,
    /// Action and contracted rate of a trajectory file.
    Action,
    /// Solve the resolvent equation f - lambda H f = h on a grid.
    HjSolve,
    /// Doubling-of-variables diagnostic along an alpha1 ladder.
    HjDoubling,
    /// Convergence of the lifted generators H_n to H.
    HjConvergence,
    /// Rare-event tube probabilities against the candidate action.
    LdpVerify,
    /// Periodic averaging: empirical paths against the averaged flow.
    PeriodicVerify,
    /// Exponential containment of the empirical flux.
    ContainmentCheck,
    /// Proper-kernel conditions on a sampled simplex.
    KernelCheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Lln => "lln",
            Command::RateEval => "rate-eval",
            Command::Action => "action",
            Command::HjSolve => "hj-solve",
            Command::HjDoubling => "hj-doubling",
            Command::HjConvergence => "hj-convergence",
            Command::LdpVerify => "ldp-verify",
            Command::PeriodicVerify => "periodic-verify",
            Command::ContainmentCheck => "containment-check",
            Command::KernelCheck => "kernel-check",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("fluxldp {}: {err}", cli.command.name());
            match err {
                CliError::Validation(_) => ExitCode::from(1),
                CliError::Numerical(_) => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = ExperimentConfig::load(&cli.config, &cli.overrides)?;
    if let Some(workers) = config.workers.filter(|&w| w > 0) {
        // Ignore the error when a pool already exists (tests, reruns).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    let ctx = commands::RunContext::prepare(config, cli.command.name())?;
    match cli.command {
        Command::Simulate => commands::simulation::simulate(&ctx),
        Command::Lln => commands::simulation::lln(&ctx),
        Command::RateEval => commands::rates::rate_eval(&ctx),
        Command::Action => commands::rates::action(&ctx),
        Command::HjSolve => commands::hj::solve(&ctx),
        Command::HjDoubling => commands::hj::doubling(&ctx),
        Command::HjConvergence => commands::hj::convergence(&ctx),
        Command::LdpVerify => commands::ldp::ldp_verify(&ctx),
        Command::PeriodicVerify => commands::ldp::periodic_verify(&ctx),
        Command::ContainmentCheck => commands::ldp::containment_check(&ctx),
        Command::KernelCheck => commands::simulation::kernel_check(&ctx),
    }
}
