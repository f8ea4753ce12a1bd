//! Python bindings: model construction, the samplers, the flow solver,
//! the solution estimators, the particle chain and the harness commands.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fkinetic::appendix_rates::{rate_bound_check as rate_check, RateCase, RateFunction, SubThreshold};
use fkinetic::ctrw::{scaled_ctrw_evaluate, CtrwParams};
use fkinetic::harness::{self, Command, ExperimentConfig};
use fkinetic::kinetic::{flow_functional, solve_flow_grid, FlowSolution};
use fkinetic::model::{Coefficient, EmpiricalMeasure, GridDensity, Interaction, ModelSpec, Observable, TestFunctional};
use fkinetic::quad::Quadrature;
use fkinetic::random::{sample_onesided_stable, sample_pareto_waiting, RngStream};
use fkinetic::subordinator::{
    evaluate_direct, evaluate_formula, evaluate_formula_density, simulate_subordinator, EstimatorSettings,
};

fn to_py(e: fkinetic::Error) -> PyErr {
    if e.is_configuration() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Model coefficients on a bounded domain.
#[pyclass(name = "Model", module = "fkinetic_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    spec: ModelSpec,
}

#[pymethods]
impl PyModel {
    /// Each coefficient is a `(family, params)` pair, e.g. `("constant", [1.0])`.
    #[new]
    #[pyo3(signature = (x_lo, x_hi, alpha, diffusion=("constant".to_string(), vec![0.0]), drift=("constant".to_string(), vec![1.0]), intensity=("constant".to_string(), vec![1.0]), interaction=("none".to_string(), vec![])))]
    fn new(
        x_lo: f64,
        x_hi: f64,
        alpha: f64,
        diffusion: (String, Vec<f64>),
        drift: (String, Vec<f64>),
        intensity: (String, Vec<f64>),
        interaction: (String, Vec<f64>),
    ) -> PyResult<Self> {
        let spec = ModelSpec::new(
            (x_lo, x_hi),
            Coefficient::from_family(&diffusion.0, &diffusion.1).map_err(to_py)?,
            Coefficient::from_family(&drift.0, &drift.1).map_err(to_py)?,
            Interaction::from_family(&interaction.0, &interaction.1).map_err(to_py)?,
            Coefficient::from_family(&intensity.0, &intensity.1).map_err(to_py)?,
            alpha,
        )
        .map_err(to_py)?;
        Ok(Self { spec })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.spec.alpha()
    }

    #[getter]
    fn domain(&self) -> (f64, f64) {
        self.spec.domain()
    }

    fn diffusion(&self, x: f64) -> f64 {
        self.spec.g(x)
    }

    fn intensity(&self, x: f64) -> f64 {
        self.spec.a(x)
    }

    fn drift(&self, x: f64) -> f64 {
        self.spec.b0(x)
    }

    fn __repr__(&self) -> String {
        let (lo, hi) = self.spec.domain();
        format!("Model(domain=({lo}, {hi}), alpha={})", self.spec.alpha())
    }
}

/// `F(μ) = (f, μ)` or `(f, μ)²`.
#[pyclass(name = "Functional", module = "fkinetic_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFunctional {
    inner: TestFunctional,
}

#[pymethods]
impl PyFunctional {
    #[new]
    #[pyo3(signature = (observable="identity", params=vec![], quadratic=false))]
    fn new(observable: &str, params: Vec<f64>, quadratic: bool) -> PyResult<Self> {
        let obs = Observable::from_name(observable, &params).map_err(to_py)?;
        let inner = if quadratic {
            TestFunctional::quadratic(obs)
        } else {
            TestFunctional::linear(obs)
        };
        Ok(Self { inner })
    }

    /// Value on an empirical measure given by its atoms.
    fn of_atoms(&self, atoms: Vec<f64>) -> PyResult<f64> {
        let mu = EmpiricalMeasure::new(atoms).map_err(to_py)?;
        Ok(self.inner.measure_value(&mu))
    }
}

/// Grid solution of the limiting flow from a Gaussian initial law.
#[pyclass(name = "Flow", module = "fkinetic_py")]
struct PyFlow {
    flow: FlowSolution,
}

#[pymethods]
impl PyFlow {
    #[new]
    #[pyo3(signature = (model, t_end, dt, cells=400, mean=0.0, sd=0.3))]
    fn new(model: &PyModel, t_end: f64, dt: f64, cells: usize, mean: f64, sd: f64) -> PyResult<Self> {
        let (lo, hi) = model.spec.domain();
        let mu0 = GridDensity::gaussian(lo, hi, cells, mean, sd).map_err(to_py)?;
        let flow = solve_flow_grid(&mu0, t_end, dt, &model.spec).map_err(to_py)?;
        Ok(Self { flow })
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.flow.times().to_vec()
    }

    #[getter]
    fn betas(&self) -> Vec<f64> {
        self.flow.betas().to_vec()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.flow.horizon()
    }

    /// Means of the recorded snapshots.
    fn means(&self) -> Vec<f64> {
        self.flow.measures().iter().map(|m| m.mean()).collect()
    }

    fn functional(&self, functional: &PyFunctional, u: f64) -> PyResult<f64> {
        flow_functional(&functional.inner, &self.flow, u).map_err(to_py)
    }

    fn extend_to(&mut self, t_end: f64) -> PyResult<()> {
        self.flow.extend_to(t_end).map_err(to_py)
    }

    /// `(value, std_error)` of the subordinated solution at level `t`.
    /// `method` is `direct`, `formula` or `formula-density`.
    #[pyo3(signature = (functional, t, method="direct", n_paths=10_000, du=0.005, seed=0, s0=0.0, cutoff=None))]
    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        &mut self,
        py: Python<'_>,
        functional: &PyFunctional,
        t: f64,
        method: &str,
        n_paths: u64,
        du: f64,
        seed: u64,
        s0: f64,
        cutoff: Option<f64>,
    ) -> PyResult<(f64, f64)> {
        let settings = EstimatorSettings::new(n_paths, du, seed);
        let m = harness::parse_method(method).map_err(to_py)?;
        let f = functional.inner;
        let flow = &mut self.flow;
        let e = py
            .detach(|| match m {
                fkinetic::subordinator::Method::Direct => evaluate_direct(&f, flow, s0, t, &settings),
                fkinetic::subordinator::Method::FormulaPath => evaluate_formula(&f, flow, s0, t, cutoff, &settings),
                fkinetic::subordinator::Method::FormulaDensity => {
                    evaluate_formula_density(&f, flow, s0, t, cutoff, &settings)
                }
            })
            .map_err(to_py)?;
        Ok((e.value, e.std_error))
    }
}

/// Waiting factors with density `β r^(-1-β)` on `[1, ∞)`, from stream `(seed, 0)`.
#[pyfunction]
fn pareto_waiting(beta: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let mut rng = RngStream::new(seed, 0);
    (0..n).map(|_| sample_pareto_waiting(beta, &mut rng).map_err(to_py)).collect()
}

/// One-sided stable variables with Laplace transform `exp(-λ^β)`.
#[pyfunction]
fn onesided_stable(beta: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let mut rng = RngStream::new(seed, 0);
    (0..n).map(|_| sample_onesided_stable(beta, &mut rng).map_err(to_py)).collect()
}

/// Constant-order subordinator path on the grid `0, du, ..., u_end`.
#[pyfunction]
#[pyo3(signature = (beta, u_end, du, seed, s0=0.0))]
fn subordinator_path(beta: f64, u_end: f64, du: f64, seed: u64, s0: f64) -> PyResult<Vec<f64>> {
    let mut rng = RngStream::new(seed, 0);
    Ok(simulate_subordinator(|_| beta, s0, u_end, du, &mut rng).map_err(to_py)?.values)
}

/// Runs the chain with `n` particles at Gaussian quantiles until its time
/// coordinate passes `t`. Returns `(positions, inverse_time, steps)`.
#[pyfunction]
#[pyo3(signature = (model, n, t, seed, stream=0, mean=0.0, sd=0.3))]
#[allow(clippy::too_many_arguments)]
fn simulate_ctrw(
    py: Python<'_>,
    model: &PyModel,
    n: usize,
    t: f64,
    seed: u64,
    stream: u64,
    mean: f64,
    sd: f64,
) -> PyResult<(Vec<f64>, f64, u64)> {
    let mu0 = EmpiricalMeasure::gaussian_quantiles(n, mean, sd).map_err(to_py)?;
    let params = CtrwParams::new(n, t).map_err(to_py)?;
    let spec = &model.spec;
    let out = py
        .detach(|| {
            let mut rng = RngStream::new(seed, stream);
            scaled_ctrw_evaluate(&mu0, 0.0, t, &params, spec, &mut rng, None)
        })
        .map_err(to_py)?;
    Ok((out.config.into_positions(), out.inverse_time, out.steps))
}

/// Rate-bound rows `(h, lhs, rhs, abs_err, bound, pass)` for `f(y) = y e^(-y)`
/// and the pure power density above `threshold`.
#[pyfunction]
#[pyo3(signature = (alpha, h_list, threshold=1.0))]
fn rate_bound_check(alpha: f64, h_list: Vec<f64>, threshold: f64) -> PyResult<Vec<(f64, f64, f64, f64, f64, bool)>> {
    let case = RateCase::new(alpha, threshold, SubThreshold::Zero).map_err(to_py)?;
    let r = rate_check(&case, &RateFunction::YExp, 1.0, &h_list, &Quadrature::default()).map_err(to_py)?;
    Ok(r.rows.iter().map(|r| (r.h, r.lhs, r.rhs, r.abs_err, r.bound, r.pass)).collect())
}

fn parse_command(name: &str) -> PyResult<Command> {
    let all = [
        Command::SimulateCtrw,
        Command::SolveFlow,
        Command::Subordinate,
        Command::Evaluate,
        Command::Residual,
        Command::AppendixRates,
        Command::ConvergeMarkov,
        Command::ConvergeCtrw,
    ];
    all.into_iter()
        .find(|c| c.name() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown command {name}")))
}

/// Runs a harness command from TOML text; returns `{"pass", "files", "checks"}`.
#[pyfunction]
#[pyo3(signature = (command, output_dir, config_toml=""))]
fn run_command<'py>(
    py: Python<'py>,
    command: &str,
    output_dir: &str,
    config_toml: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cmd = parse_command(command)?;
    let mut config = ExperimentConfig::from_toml_str(config_toml).map_err(to_py)?;
    config.output_dir = output_dir.into();
    let report = py.detach(|| harness::run(cmd, &config)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("pass", report.passed())?;
    d.set_item("files", report.files.clone())?;
    let checks: Vec<(String, bool, String)> = report
        .checks
        .iter()
        .map(|c| (c.name.clone(), c.pass, c.detail.clone()))
        .collect();
    d.set_item("checks", checks)?;
    Ok(d)
}

#[pymodule]
fn fkinetic_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyFunctional>()?;
    m.add_class::<PyFlow>()?;
    m.add_function(wrap_pyfunction!(pareto_waiting, m)?)?;
    m.add_function(wrap_pyfunction!(onesided_stable, m)?)?;
    m.add_function(wrap_pyfunction!(subordinator_path, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_ctrw, m)?)?;
    m.add_function(wrap_pyfunction!(rate_bound_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    Ok(())
}
