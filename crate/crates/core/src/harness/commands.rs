//! One runner per subcommand. Each validates the config, runs its pipeline,
//! writes CSV/JSON artifacts plus `manifest.json` into the output directory,
//! and returns the checks it performed.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use super::config::{Command, ExperimentConfig};
use super::convergence::{analytic_limit, run_convergence_ctrw, run_convergence_markov, ConvergenceReport, SweepKind};
use crate::appendix_rates::{lhs_scaled_integral, rate_bound_check, rhs_stable_integral, shifted_form_check, RateFunction};
use crate::ctrw::{evaluate_replicas, scaled_ctrw_evaluate, write_trajectory_csv};
use crate::error::{Error, Result};
use crate::fractional::{mixed_equation_residual, ResidualSettings};
use crate::kinetic::{solve_flow_ensemble, solve_flow_grid, FlowMeasure};
use crate::quad::Quadrature;
use crate::random::{substream_seed, RngStream};
use crate::stats::{agree_within, combined_sigma, wasserstein1_to_grid, Welford};
use crate::subordinator::{
    estimate_density, evaluate_direct, evaluate_formula, evaluate_formula_density, simulate_subordinator, Method,
    SolutionEstimate,
};

/// Largest single-step mass change accepted from the grid solver.
pub const MASS_DRIFT_TOL: f64 = 1e-12;
/// Tolerance of the exactness check for functions vanishing below `B h`.
pub const EXACTNESS_TOL: f64 = 1e-8;
/// Allowed shortfall of the fitted decay exponent below `1 - α`.
pub const SLOPE_TOL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub command: Command,
    pub output_dir: PathBuf,
    pub files: Vec<String>,
    pub checks: Vec<Check>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    checks: Vec<Check>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            checks: Vec::new(),
        })
    }

    /// Registers a file name and returns its full path.
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let path = self.path(name);
        let io = |e: csv::Error| Error::Io {
            path: path.clone(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        for r in rows {
            w.serialize(r).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })
    }

    fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, pass, detail));
    }

    fn finish(mut self, command: Command, config: &ExperimentConfig) -> Result<RunReport> {
        let manifest = Manifest {
            command: command.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config_hash: config.hash(),
            config: ExperimentConfig {
                output_dir: PathBuf::new(),
                ..config.clone()
            },
            files: self.files.clone(),
            checks: self.checks.clone(),
            pass: self.checks.iter().all(|c| c.pass),
        };
        self.json("manifest.json", &manifest)?;
        Ok(RunReport {
            command,
            output_dir: self.dir,
            files: self.files,
            checks: self.checks,
        })
    }
}

/// Validates `config` for `command` and runs it.
pub fn run(command: Command, config: &ExperimentConfig) -> Result<RunReport> {
    config.validate_for(command)?;
    let mut art = Artifacts::new(&config.output_dir)?;
    match command {
        Command::SimulateCtrw => simulate_ctrw(config, &mut art)?,
        Command::SolveFlow => solve_flow(config, &mut art)?,
        Command::Subordinate => subordinate(config, &mut art)?,
        Command::Evaluate => evaluate(config, &mut art)?,
        Command::Residual => residual(config, &mut art)?,
        Command::AppendixRates => appendix_rates(config, &mut art)?,
        Command::ConvergeMarkov => converge(run_convergence_markov(config)?, &mut art)?,
        Command::ConvergeCtrw => converge(run_convergence_ctrw(config)?, &mut art)?,
    }
    art.finish(command, config)
}

#[derive(Serialize)]
struct ScalarEstimate {
    name: String,
    value: f64,
    std_error: f64,
    samples: u64,
}

fn simulate_ctrw(config: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let spec = config.model()?;
    let functional = config.test_functional()?;
    let params = config.chain_params(config.n)?;
    let mu0 = config.initial_particles(config.n)?;

    // Stream 0 of the recording seed: one trajectory, truncated to `record_steps` rows.
    let mut rng = RngStream::new(substream_seed(config.seed, "trajectory"), 0);
    let mut records = Vec::new();
    let out = scaled_ctrw_evaluate(&mu0, config.s0, config.t, &params, &spec, &mut rng, Some(&mut records))?;
    records.truncate(config.record_steps as usize);
    write_trajectory_csv(&art.path("trajectory.csv"), &records)?;

    let reps = evaluate_replicas(
        &functional,
        &mu0,
        config.s0,
        config.t,
        &params,
        &spec,
        substream_seed(config.seed, "replicas"),
        config.replicas,
    )?;
    art.csv("replicas.csv", &reps)?;
    let value: Welford = reps.iter().map(|r| r.functional).collect();
    let inverse: Welford = reps.iter().map(|r| r.inverse_time).collect();
    let summary = vec![
        ScalarEstimate {
            name: "functional".into(),
            value: value.mean(),
            std_error: value.std_error(),
            samples: value.count(),
        },
        ScalarEstimate {
            name: "inverse_time".into(),
            value: inverse.mean(),
            std_error: inverse.std_error(),
            samples: inverse.count(),
        },
        ScalarEstimate {
            name: "recorded_run_steps".into(),
            value: out.steps as f64,
            std_error: 0.0,
            samples: 1,
        },
    ];
    art.json("estimate.json", &summary)
}

#[derive(Serialize)]
struct FlowSummary {
    horizon: f64,
    dt: f64,
    steps: u64,
    max_mass_drift: f64,
    max_boundary_mass: f64,
    final_mean: f64,
    final_beta: f64,
    ensemble_particles: usize,
    ensemble_w1_gap: Option<f64>,
}

fn solve_flow(config: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let spec = config.model()?;
    let mu0 = config.initial_grid()?;
    let horizon = config.t - config.s0;
    let flow = solve_flow_grid(&mu0, horizon, config.dt, &spec)?;
    flow.write_csv(&art.path("flow.csv"))?;
    let last = flow.measures().last().expect("snapshots");
    let d = &flow.diagnostics;
    art.check(
        "mass_conservation",
        d.max_mass_drift <= MASS_DRIFT_TOL,
        format!("max per-step mass change {:e} (tolerance {MASS_DRIFT_TOL:e})", d.max_mass_drift),
    );
    let mut w1 = None;
    if config.ensemble_particles > 0 {
        let start = crate::model::EmpiricalMeasure::quantiles_of(&mu0, config.ensemble_particles)?;
        let ens = solve_flow_ensemble(
            &start,
            horizon,
            config.dt,
            &spec,
            config.ensemble_particles,
            substream_seed(config.seed, "ensemble"),
        )?;
        ens.write_csv(&art.path("ensemble.csv"))?;
        if let (FlowMeasure::Particles(p), FlowMeasure::Grid(g)) = (ens.measures().last().expect("snapshots"), last) {
            w1 = Some(wasserstein1_to_grid(p.positions(), g)?);
        }
    }
    art.json(
        "summary.json",
        &FlowSummary {
            horizon: flow.horizon(),
            dt: flow.dt(),
            steps: d.steps,
            max_mass_drift: d.max_mass_drift,
            max_boundary_mass: d.max_boundary_mass,
            final_mean: last.mean(),
            final_beta: *flow.betas().last().expect("snapshots"),
            ensemble_particles: config.ensemble_particles,
            ensemble_w1_gap: w1,
        },
    )
}

#[derive(Serialize)]
struct LaplaceRow {
    lambda: f64,
    estimate: f64,
    std_error: f64,
    analytic: Option<f64>,
    pass: Option<bool>,
}

#[derive(Serialize)]
struct DensityRow {
    left: f64,
    right: f64,
    density: f64,
}

fn subordinate(config: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let spec = config.model()?;
    let settings = config.estimator_settings()?;
    let u = config.t - config.s0;
    let flow = solve_flow_grid(&config.initial_grid()?, u, config.dt, &spec)?;
    let last_beta = *flow.betas().last().expect("snapshots");
    let seed = substream_seed(config.seed, "subordinate");
    let paths: Vec<_> = (0..settings.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = RngStream::new(seed, p);
            simulate_subordinator(|v| flow.beta_at(v).unwrap_or(last_beta), config.s0, u, settings.du, &mut rng)
        })
        .collect::<Result<_>>()?;
    let increments: Vec<f64> = paths.iter().map(|p| p.value_at(u) - config.s0).collect();

    // Constant order only when the intensity is constant.
    let beta = spec.intensity().is_constant().then(|| spec.alpha() * spec.a(0.0));
    let mut rows = Vec::new();
    for &lambda in &config.lambdas {
        let w: Welford = increments.iter().map(|s| (-lambda * s).exp()).collect();
        let analytic = beta.map(|b| (-u * gamma(1.0 - b) * lambda.powf(b)).exp());
        let pass = analytic.map(|a| (w.mean() - a).abs() <= config.k_sigma * w.std_error());
        if let (Some(a), Some(p)) = (analytic, pass) {
            art.check(
                format!("laplace_lambda_{lambda}"),
                p,
                format!("estimate {:.6} ± {:.2e}, closed form {a:.6}", w.mean(), w.std_error()),
            );
        }
        rows.push(LaplaceRow {
            lambda,
            estimate: w.mean(),
            std_error: w.std_error(),
            analytic,
            pass,
        });
    }
    art.csv("laplace.csv", &rows)?;

    let mut sorted = increments.clone();
    sorted.sort_by(f64::total_cmp);
    let top = sorted[((sorted.len() as f64 * 0.99) as usize).min(sorted.len() - 1)];
    let bins = config.density_bins.max(1);
    let edges: Vec<f64> = (0..=bins).map(|i| config.s0 + top * i as f64 / bins as f64).collect();
    let d = estimate_density(&paths, u, &edges)?;
    let density: Vec<DensityRow> = d
        .edges
        .windows(2)
        .zip(&d.density)
        .map(|(e, &v)| DensityRow {
            left: e[0],
            right: e[1],
            density: v,
        })
        .collect();
    art.csv("density.csv", &density)
}

#[derive(Serialize)]
struct EvaluateSummary {
    estimates: Vec<SolutionEstimate>,
    gaps: Vec<Gap>,
    analytic: Option<f64>,
}

#[derive(Serialize)]
struct Gap {
    first: Method,
    second: Method,
    gap: f64,
    combined_sigma: f64,
    pass: bool,
}

fn evaluate(config: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let spec = config.model()?;
    let functional = config.test_functional()?;
    let settings = config.estimator_settings()?;
    let mut flow = solve_flow_grid(&config.initial_grid()?, config.t - config.s0, config.dt, &spec)?;
    let mut estimates = Vec::new();
    for m in config.methods()? {
        let e = match m {
            Method::Direct => evaluate_direct(&functional, &mut flow, config.s0, config.t, &settings)?,
            Method::FormulaPath => evaluate_formula(&functional, &mut flow, config.s0, config.t, config.cutoff, &settings)?,
            Method::FormulaDensity => {
                evaluate_formula_density(&functional, &mut flow, config.s0, config.t, config.cutoff, &settings)?
            }
        };
        estimates.push(e);
    }
    let k = config.k_sigma;
    let mut gaps = Vec::new();
    for (i, a) in estimates.iter().enumerate() {
        for b in &estimates[i + 1..] {
            let pass = agree_within(a.value, a.std_error, b.value, b.std_error, k);
            let gap = Gap {
                first: a.method,
                second: b.method,
                gap: a.value - b.value,
                combined_sigma: combined_sigma(a.std_error, b.std_error),
                pass,
            };
            art.check(
                format!("agree_{:?}_{:?}", a.method, b.method).to_lowercase(),
                pass,
                format!("gap {:.3e} vs {k} x {:.3e}", gap.gap, gap.combined_sigma),
            );
            gaps.push(gap);
        }
    }
    let analytic = if config.cutoff.is_none() {
        analytic_limit(config, &spec, SweepKind::Ctrw)?
    } else {
        None
    };
    if let Some(v) = analytic {
        for e in &estimates {
            art.check(
                format!("closed_form_{:?}", e.method).to_lowercase(),
                agree_within(e.value, e.std_error, v, 0.0, k),
                format!("{:.6} ± {:.2e} vs {v:.6}", e.value, e.std_error),
            );
        }
    }
    let rows: Vec<_> = estimates.clone();
    art.csv("estimates.csv", &rows)?;
    art.json(
        "estimates.json",
        &EvaluateSummary {
            estimates,
            gaps,
            analytic,
        },
    )
}

fn residual(config: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let spec = config.model()?;
    let functional = config.test_functional()?;
    let mut flow = solve_flow_grid(&config.initial_grid()?, config.t, config.dt, &spec)?;
    let s_points: Vec<f64> = config.s_fractions.iter().map(|f| f * config.t).collect();
    let settings = ResidualSettings::new(config.n_paths, config.du, config.intervals, config.seed);
    let report = mixed_equation_residual(&functional, &mut flow, config.t, &s_points, &settings)?;
    report.write_csv(&art.path("residual.csv"))?;
    for r in &report.rows {
        art.check(
            format!("residual_s_{}", r.s),
            r.within(config.k_sigma),
            format!("residual {:.3e}, error bar {:.3e}", r.residual, r.mc_error),
        );
    }
    art.json("residual.json", &report)
}

#[derive(Serialize)]
struct ExactRow {
    h: f64,
    lhs: f64,
    rhs: f64,
    abs_err: f64,
    pass: bool,
}

fn appendix_rates(config: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let quad = Quadrature::default();
    let (case, f, lipschitz) = config.rate_case()?;
    let report = rate_bound_check(&case, &f, lipschitz, &config.h_list, &quad)?;
    report.write_csv(&art.path("rates.csv"))?;
    art.check(
        "rate_bound",
        report.all_pass(),
        match report.first_violation() {
            Some(h) => format!("bound violated at h = {h}"),
            None => format!("holds at all {} step sizes", report.rows.len()),
        },
    );
    let floor = 1.0 - case.alpha - SLOPE_TOL;
    if let Some(slope) = report.slope {
        art.check(
            "decay_exponent",
            slope >= floor,
            format!("fitted slope {slope:.4}, required at least {floor:.4}"),
        );
    }

    // Exactness for an indicator supported at or beyond B h, h ≤ 1.
    let b = case.threshold;
    let g = RateFunction::Indicator { lo: b, hi: 2.0 * b };
    let rhs = rhs_stable_integral(&g, case.alpha, &quad)?;
    let exact: Vec<ExactRow> = config
        .h_list
        .iter()
        .filter(|&&h| h <= 1.0)
        .map(|&h| {
            let lhs = lhs_scaled_integral(&case, &g, h, &quad)?;
            let abs_err = (lhs - rhs).abs();
            Ok(ExactRow {
                h,
                lhs,
                rhs,
                abs_err,
                pass: abs_err <= EXACTNESS_TOL,
            })
        })
        .collect::<Result<_>>()?;
    art.check(
        "exactness_beyond_threshold",
        exact.iter().all(|r| r.pass),
        format!("indicator of [{b}, {}], tolerance {EXACTNESS_TOL:e}", 2.0 * b),
    );
    art.csv("exactness.csv", &exact)?;

    if !config.tau_list.is_empty() {
        for (label, sign) in [("plus", 1.0), ("minus", -1.0)] {
            let r = shifted_form_check(&case, config.shifted_x, sign, config.shifted_lipschitz, &config.tau_list, &quad)?;
            r.write_csv(&art.path(&format!("shifted_{label}.csv")))?;
            art.check(
                format!("shifted_bound_{label}"),
                r.all_pass(),
                match r.first_violation() {
                    Some(h) => format!("bound violated at h = {h}"),
                    None => format!("holds at all {} step sizes", r.rows.len()),
                },
            );
        }
    }
    art.json("rates.json", &report)
}

fn converge(report: ConvergenceReport, art: &mut Artifacts) -> Result<()> {
    art.csv("sweep.csv", &report.rows)?;
    art.check(
        "limit_consistent",
        report.limit_consistent,
        format!("reference {:.6} ± {:.2e} ({:?})", report.reference, report.reference_error, report.reference_source),
    );
    art.check("gap_trend", report.trend_ok, "no gap grows by more than the combined error allowance");
    art.check(
        "final_gap",
        report.final_ok,
        report
            .rows
            .last()
            .map(|r| format!("N = {}: gap {:.3e} ± {:.2e}", r.n, r.gap, r.gap_sigma))
            .unwrap_or_default(),
    );
    art.json("report.json", &report)
}
