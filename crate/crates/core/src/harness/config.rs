//! Flat experiment configuration: one TOML table, every key optional,
//! unknown keys rejected. Command-line overrides are `key=value` pairs whose
//! value is parsed as a TOML value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::appendix_rates::{RateCase, RateFunction, ScaledBase, SubThreshold};
use crate::ctrw::{Clock, CtrwParams, DEFAULT_MAX_STEPS};
use crate::error::{Error, Result};
use crate::model::{
    Coefficient, EmpiricalMeasure, FunctionalKind, GridDensity, Interaction, ModelSpec, Observable,
    SFactor, TestFunctional,
};
use crate::subordinator::{EstimatorSettings, Method};

/// Environment variable overriding `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "FKINETIC_OUTPUT_DIR";
/// Environment variable giving the worker-thread count.
pub const THREADS_ENV: &str = "FKINETIC_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    // Model.
    pub x_lo: f64,
    pub x_hi: f64,
    pub diffusion: String,
    pub diffusion_params: Vec<f64>,
    pub drift: String,
    pub drift_params: Vec<f64>,
    pub intensity: String,
    pub intensity_params: Vec<f64>,
    pub interaction: String,
    pub interaction_params: Vec<f64>,
    pub alpha: f64,

    // Gaussian initial law.
    pub init_mean: f64,
    pub init_sd: f64,

    // Test functional.
    pub functional: String,
    pub observable: String,
    pub observable_params: Vec<f64>,
    pub s_factor: String,
    pub s_factor_params: Vec<f64>,

    /// Evaluation level and starting value of the time coordinate.
    pub t: f64,
    pub s0: f64,

    // Flow solver.
    pub cells: usize,
    pub dt: f64,
    /// Particles for the ensemble cross-check of `solve-flow`; zero skips it.
    pub ensemble_particles: usize,

    // Subordinator and estimators.
    pub n_paths: u64,
    pub du: f64,
    pub methods: Vec<String>,
    /// Truncation `K` of the solution formula; absent means none.
    pub cutoff: Option<f64>,
    pub density_bins: usize,
    pub lambdas: Vec<f64>,

    // Particle chain.
    pub n: usize,
    pub n_list: Vec<usize>,
    pub replicas: u64,
    pub clock: String,
    pub max_steps: u64,
    /// Steps recorded in `trajectory.csv` by `simulate-ctrw`.
    pub record_steps: u64,

    // Residual.
    pub s_fractions: Vec<f64>,
    pub intervals: usize,

    // Rate checks.
    pub rate_alpha: f64,
    pub rate_threshold: f64,
    pub rate_sub: String,
    pub rate_function: String,
    pub rate_function_params: Vec<f64>,
    pub rate_lipschitz: Option<f64>,
    pub h_list: Vec<f64>,
    pub tau_list: Vec<f64>,
    pub shifted_x: f64,
    /// `sup_y |e^(-(x+y)²) - e^(-x²)| / y`; the default is the value at `x = 0`.
    pub shifted_lipschitz: f64,

    /// Multiple of the combined standard error used by statistical checks.
    pub k_sigma: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            x_lo: -4.0,
            x_hi: 8.0,
            diffusion: "constant".into(),
            diffusion_params: vec![0.0],
            drift: "constant".into(),
            drift_params: vec![1.0],
            intensity: "constant".into(),
            intensity_params: vec![1.0],
            interaction: "none".into(),
            interaction_params: vec![],
            alpha: 0.5,
            init_mean: 0.0,
            init_sd: 0.3,
            functional: "linear".into(),
            observable: "identity".into(),
            observable_params: vec![],
            s_factor: "none".into(),
            s_factor_params: vec![],
            t: 1.0,
            s0: 0.0,
            cells: 600,
            dt: 0.005,
            ensemble_particles: 0,
            n_paths: 20_000,
            du: 0.002,
            methods: vec!["direct".into(), "formula".into()],
            cutoff: None,
            density_bins: 200,
            lambdas: vec![0.5, 1.0, 2.0],
            n: 100,
            n_list: vec![50, 100, 200, 400],
            replicas: 1000,
            clock: "diffusive".into(),
            max_steps: DEFAULT_MAX_STEPS,
            record_steps: 10_000,
            s_fractions: vec![0.25, 0.5, 0.75],
            intervals: 100,
            rate_alpha: 0.5,
            rate_threshold: 1.0,
            rate_sub: "zero".into(),
            rate_function: "y-exp".into(),
            rate_function_params: vec![],
            rate_lipschitz: None,
            h_list: vec![0.2, 0.1, 0.05, 0.025],
            tau_list: vec![0.5, 0.25, 0.125, 0.0625],
            shifted_x: 0.0,
            shifted_lipschitz: 0.638_172_686_338_895,
            k_sigma: 3.0,
            seed: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive, got {v}")))
    }
}

fn nonempty<T>(field: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        Err(Error::config(field, "must not be empty"))
    } else {
        Ok(())
    }
}

/// Re-labels a module parameter error with the config field it came from.
fn field_err(field: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::Parameter { reason, .. } => Error::config(field, reason),
        Error::Config { message, .. } => Error::config(field, message),
        other => other,
    }
}

impl ExperimentConfig {
    /// Reads a config file; `None` gives the defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::config(p.display().to_string(), e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o.as_str(), "override must look like key=value"))?;
            let key = key.trim();
            let value = parse_value(value.trim())
                .map_err(|m| Error::config(key, format!("cannot parse override value: {m}")))?;
            table.insert(key.to_string(), value);
        }
        Self::from_table(table)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table = text
            .parse::<toml::Table>()
            .map_err(|e| Error::config("config", e.to_string()))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))
    }

    /// Applies the output-directory environment override.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let diffusion =
            Coefficient::from_family(&self.diffusion, &self.diffusion_params).map_err(field_err("diffusion_params"))?;
        let drift = Coefficient::from_family(&self.drift, &self.drift_params).map_err(field_err("drift_params"))?;
        let intensity =
            Coefficient::from_family(&self.intensity, &self.intensity_params).map_err(field_err("intensity_params"))?;
        let interaction = Interaction::from_family(&self.interaction, &self.interaction_params)
            .map_err(field_err("interaction_params"))?;
        ModelSpec::new((self.x_lo, self.x_hi), diffusion, drift, interaction, intensity, self.alpha)
            .map_err(|e| match e {
                Error::Parameter { name, reason } => Error::config(name, reason),
                other => other,
            })
    }

    pub fn initial_grid(&self) -> Result<GridDensity> {
        positive("init_sd", self.init_sd)?;
        if self.cells < 2 {
            return Err(Error::config("cells", "need at least two cells"));
        }
        GridDensity::gaussian(self.x_lo, self.x_hi, self.cells, self.init_mean, self.init_sd)
            .map_err(field_err("init_mean"))
    }

    /// Grid initial law, with `dt` checked against the solver's stability bound.
    pub fn initial_grid_checked(&self, spec: &ModelSpec) -> Result<GridDensity> {
        let mu0 = self.initial_grid()?;
        positive("dt", self.dt)?;
        let bound = crate::kinetic::grid_stability_bound(&mu0, spec);
        if self.dt > bound {
            return Err(Error::config(
                "dt",
                format!("{} exceeds the grid stability bound {bound:.4e} for {} cells", self.dt, self.cells),
            ));
        }
        Ok(mu0)
    }

    pub fn initial_particles(&self, n: usize) -> Result<EmpiricalMeasure> {
        positive("init_sd", self.init_sd)?;
        EmpiricalMeasure::gaussian_quantiles(n, self.init_mean, self.init_sd).map_err(field_err("n"))
    }

    pub fn test_functional(&self) -> Result<TestFunctional> {
        let obs = Observable::from_name(&self.observable, &self.observable_params)
            .map_err(field_err("observable"))?;
        let f = match self.functional.as_str() {
            "linear" => TestFunctional::linear(obs),
            "quadratic" => TestFunctional::quadratic(obs),
            other => return Err(Error::config("functional", format!("unknown kind {other} (linear, quadratic)"))),
        };
        let psi = match (self.s_factor.as_str(), self.s_factor_params.as_slice()) {
            ("none", []) => None,
            ("exp", &[rate]) => Some(SFactor::Exp { rate }),
            ("gaussian", &[center, width]) if width > 0.0 => Some(SFactor::Gaussian { center, width }),
            ("cutoff", &[end]) if end > 0.0 => Some(SFactor::Cutoff { end }),
            (name, p) => {
                return Err(Error::config(
                    "s_factor",
                    format!("unknown factor {name} with {} parameters (none, exp, gaussian, cutoff)", p.len()),
                ))
            }
        };
        Ok(match psi {
            Some(p) => f.with_s_factor(p),
            None => f,
        })
    }

    pub fn functional_kind(&self) -> Result<FunctionalKind> {
        Ok(self.test_functional()?.kind)
    }

    fn check_times(&self) -> Result<()> {
        if !(self.t > self.s0 && self.t.is_finite()) {
            return Err(Error::config("t", format!("need t > s0 = {}", self.s0)));
        }
        positive("dt", self.dt)?;
        positive("du", self.du)
    }

    pub fn estimator_settings(&self) -> Result<EstimatorSettings> {
        if self.n_paths < 2 {
            return Err(Error::config("n_paths", "need at least two paths for an error bar"));
        }
        positive("du", self.du)?;
        if let Some(k) = self.cutoff {
            if !(k > 1.0) {
                return Err(Error::config("cutoff", format!("K must exceed 1, got {k}")));
            }
        }
        let mut s = EstimatorSettings::new(self.n_paths, self.du, self.seed);
        s.density_bins = self.density_bins.max(1);
        Ok(s)
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        nonempty("methods", &self.methods)?;
        self.methods.iter().map(|m| parse_method(m)).collect()
    }

    pub fn clock(&self) -> Result<Clock> {
        match self.clock.as_str() {
            "diffusive" => Ok(Clock::Diffusive),
            "coupled" => Ok(Clock::Coupled),
            other => Err(Error::config("clock", format!("unknown clock {other} (diffusive, coupled)"))),
        }
    }

    pub fn chain_params(&self, n: usize) -> Result<CtrwParams> {
        Ok(CtrwParams::new(n, self.t)
            .map_err(field_err("n"))?
            .with_clock(self.clock()?)
            .with_max_steps(self.max_steps))
    }

    /// `(case, f, L)` for the rate-bound check.
    pub fn rate_case(&self) -> Result<(RateCase, RateFunction, f64)> {
        let sub = match self.rate_sub.as_str() {
            "zero" => SubThreshold::Zero,
            "uniform" => SubThreshold::UniformCompletion,
            other => return Err(Error::config("rate_sub", format!("unknown sub-threshold part {other} (zero, uniform)"))),
        };
        let case = RateCase::new(self.rate_alpha, self.rate_threshold, sub).map_err(field_err("rate_threshold"))?;
        let p = self.rate_function_params.as_slice();
        let f = match (self.rate_function.as_str(), p) {
            ("zero", []) => RateFunction::Zero,
            ("y-exp", []) => RateFunction::YExp,
            ("ramp", []) => RateFunction::Ramp,
            ("indicator", &[lo, hi]) if 0.0 <= lo && lo < hi => RateFunction::Indicator { lo, hi },
            ("scaled-y-exp", &[scale]) if scale > 0.0 => RateFunction::Scaled {
                base: ScaledBase::YExp,
                scale,
            },
            ("scaled-ramp", &[scale]) if scale > 0.0 => RateFunction::Scaled {
                base: ScaledBase::Ramp,
                scale,
            },
            (name, p) => {
                return Err(Error::config(
                    "rate_function",
                    format!("unknown function {name} with {} parameters", p.len()),
                ))
            }
        };
        let lipschitz = match self.rate_lipschitz.or_else(|| f.lipschitz()) {
            Some(l) if l >= 0.0 => l,
            _ => return Err(Error::config("rate_lipschitz", "no Lipschitz constant known for this function; supply one")),
        };
        nonempty("h_list", &self.h_list)?;
        for &h in &self.h_list {
            positive("h_list", h)?;
        }
        for &tau in &self.tau_list {
            positive("tau_list", tau)?;
        }
        Ok((case, f, lipschitz))
    }

    /// Validates everything a command reads, before any computation.
    pub fn validate_for(&self, command: Command) -> Result<()> {
        positive("k_sigma", self.k_sigma)?;
        match command {
            Command::AppendixRates => {
                self.rate_case()?;
            }
            Command::SolveFlow => {
                self.initial_grid_checked(&self.model()?)?;
                self.check_times()?;
            }
            Command::Subordinate => {
                self.initial_grid_checked(&self.model()?)?;
                self.check_times()?;
                self.estimator_settings()?;
                nonempty("lambdas", &self.lambdas)?;
                for &l in &self.lambdas {
                    positive("lambdas", l)?;
                }
            }
            Command::Evaluate => {
                self.initial_grid_checked(&self.model()?)?;
                self.test_functional()?;
                self.check_times()?;
                self.estimator_settings()?;
                self.methods()?;
            }
            Command::Residual => {
                self.initial_grid_checked(&self.model()?)?;
                self.test_functional()?;
                self.check_times()?;
                self.estimator_settings()?;
                if self.s0 != 0.0 {
                    return Err(Error::config("s0", "the residual profile starts at s = 0"));
                }
                nonempty("s_fractions", &self.s_fractions)?;
                if let Some(&f) = self.s_fractions.iter().find(|&&f| !(0.0..1.0).contains(&f)) {
                    return Err(Error::config("s_fractions", format!("{f} is not in [0, 1)")));
                }
                if self.intervals < 2 {
                    return Err(Error::config("intervals", "need at least two cells"));
                }
            }
            Command::SimulateCtrw | Command::ConvergeMarkov | Command::ConvergeCtrw => {
                let spec = self.model()?;
                self.test_functional()?;
                self.check_times()?;
                if spec.g_bounds().0 <= 0.0 {
                    return Err(Error::config(
                        "diffusion_params",
                        "the particle chain needs diffusion bounded away from zero",
                    ));
                }
                if self.replicas < 2 {
                    return Err(Error::config("replicas", "need at least two replicas for an error bar"));
                }
                let sizes: Vec<usize> = if command == Command::SimulateCtrw {
                    vec![self.n]
                } else {
                    nonempty("n_list", &self.n_list)?;
                    self.n_list.clone()
                };
                for &n in &sizes {
                    if n == 0 {
                        return Err(Error::config("n_list", "particle counts must be positive"));
                    }
                    self.chain_params(n)?;
                    self.initial_particles(n)?;
                }
                if command == Command::ConvergeMarkov || command == Command::ConvergeCtrw {
                    self.initial_grid_checked(&spec)?;
                }
                if command == Command::ConvergeCtrw {
                    self.estimator_settings()?;
                }
            }
        }
        Ok(())
    }
}

fn parse_value(text: &str) -> std::result::Result<toml::Value, String> {
    // A bare word that is not valid TOML is taken as a string.
    match format!("v = {text}").parse::<toml::Table>() {
        Ok(mut t) => Ok(t.remove("v").expect("key present")),
        Err(_) if !text.is_empty() && !text.contains(['[', '{', '"', '\'']) => Ok(toml::Value::String(text.to_string())),
        Err(e) => Err(e.to_string()),
    }
}

pub fn parse_method(name: &str) -> Result<Method> {
    match name.to_ascii_lowercase().replace('_', "-").as_str() {
        "direct" => Ok(Method::Direct),
        "formula" | "formula-path" => Ok(Method::FormulaPath),
        "formula-density" | "density" => Ok(Method::FormulaDensity),
        other => Err(Error::config(
            "methods",
            format!("unknown method {other} (direct, formula, formula-density)"),
        )),
    }
}

/// The pipelines the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SimulateCtrw,
    SolveFlow,
    Subordinate,
    Evaluate,
    Residual,
    AppendixRates,
    ConvergeMarkov,
    ConvergeCtrw,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateCtrw => "simulate-ctrw",
            Command::SolveFlow => "solve-flow",
            Command::Subordinate => "subordinate",
            Command::Evaluate => "evaluate",
            Command::Residual => "residual",
            Command::AppendixRates => "appendix-rates",
            Command::ConvergeMarkov => "converge-markov",
            Command::ConvergeCtrw => "converge-ctrw",
        }
    }
}
