use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fkinetic::harness::{self, Command, ExperimentConfig};

/// Simulation and verification tools for fractional kinetic equations
/// driven by mean-field random walks.
#[derive(Parser)]
#[command(name = "fkinetic", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Run the scaled particle chain to first passage: one recorded trajectory plus replica statistics.
    SimulateCtrw(Common),
    /// Solve the limiting kinetic flow on a grid, optionally against a particle ensemble.
    SolveFlow(Common),
    /// Sample the subordinator driven by the flow and compare its Laplace transform.
    Subordinate(Common),
    /// Estimate the subordinated solution with one or more estimators.
    Evaluate(EvaluateArgs),
    /// Residual profile of the mixed fractional equation.
    Residual(Common),
    /// Check the jump-approximation rate bound by quadrature.
    AppendixRates(Common),
    /// Convergence sweep of the chain at fixed operational time.
    ConvergeMarkov(Common),
    /// Convergence sweep of the chain at first passage.
    ConvergeCtrw(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file (flat keys); defaults are used for missing keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set alpha=0.4` or `--set 'n_list=[50,100]'`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (the environment override takes precedence).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Estimator to run; repeat for several (direct, formula, formula-density).
    #[arg(long = "method")]
    methods: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    harness::configure_threads();
    let (command, common, methods) = match cli.command {
        Sub::SimulateCtrw(c) => (Command::SimulateCtrw, c, vec![]),
        Sub::SolveFlow(c) => (Command::SolveFlow, c, vec![]),
        Sub::Subordinate(c) => (Command::Subordinate, c, vec![]),
        Sub::Evaluate(e) => (Command::Evaluate, e.common, e.methods),
        Sub::Residual(c) => (Command::Residual, c, vec![]),
        Sub::AppendixRates(c) => (Command::AppendixRates, c, vec![]),
        Sub::ConvergeMarkov(c) => (Command::ConvergeMarkov, c, vec![]),
        Sub::ConvergeCtrw(c) => (Command::ConvergeCtrw, c, vec![]),
    };
    let mut config = match ExperimentConfig::load(common.config.as_deref(), &common.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = common.out {
        config.output_dir = out;
    }
    if !methods.is_empty() {
        config.methods = methods;
    }
    config.apply_env();

    match harness::run(command, &config) {
        Ok(report) => {
            for c in &report.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("wrote {} files to {}", report.files.len() + 1, report.output_dir.display());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_configuration() { 2 } else { 1 })
        }
    }
}
