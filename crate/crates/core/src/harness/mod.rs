//! Configuration, experiment orchestration and artifact writing behind the
//! command-line tool.

mod commands;
mod config;
mod convergence;

pub use commands::{run, Check, Manifest, RunReport, EXACTNESS_TOL, MASS_DRIFT_TOL, SLOPE_TOL};
pub use config::{parse_method, Command, ExperimentConfig, OUTPUT_DIR_ENV, THREADS_ENV};
pub use convergence::{
    analytic_limit, run_convergence_ctrw, run_convergence_markov, ConvergenceReport, ConvergenceRow, ReferenceSource,
    SweepKind,
};

/// Sizes the global worker pool from the thread-count environment hint.
/// Outputs do not depend on the count. Returns the count applied, if any.
pub fn configure_threads() -> Option<usize> {
    let n: usize = std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok()?;
    Some(n)
}
