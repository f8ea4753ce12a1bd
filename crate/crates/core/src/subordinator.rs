//! The stable-like subordinator whose order follows the kinetic flow, its
//! inverse, and the Monte-Carlo estimators of the subordinated solution.
//!
//! Increment law over `[u, u + du]` with the order frozen at `β = β(u)`:
//! `(du Γ(1-β))^(1/β) σ_β`, which has Laplace exponent `du Γ(1-β) λ^β`,
//! matching the Lévy density `β r^(-1-β)`.
//!
//! The three estimators use independent substreams of the master seed
//! (labels `"direct"`, `"formula-path"`, `"formula-density"`), with path
//! `p` on stream id `p`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::kinetic::FlowSolution;
use crate::model::TestFunctional;
use crate::random::{onesided_stable_unchecked, substream_seed, RngStream};
use crate::stats::Welford;

/// `(du Γ(1-β))^(1/β)`.
#[inline]
pub fn increment_scale(beta: f64, du: f64) -> f64 {
    (du * gamma(1.0 - beta)).powf(1.0 / beta)
}

/// Next value of a path, nudged up by one ulp if the increment underflows
/// so that paths stay strictly increasing.
#[inline]
fn advance(prev: f64, scale: f64, beta: f64, rng: &mut RngStream) -> f64 {
    let next = prev + scale * onesided_stable_unchecked(beta, rng);
    if next > prev {
        next
    } else {
        prev.next_up()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorPath {
    pub s0: f64,
    pub du: f64,
    /// `S(j du)` for `j = 0..=J`.
    pub values: Vec<f64>,
    /// Order used on `[j du, (j+1) du)`.
    pub betas: Vec<f64>,
}

impl SubordinatorPath {
    pub fn u_end(&self) -> f64 {
        self.betas.len() as f64 * self.du
    }

    /// `S(u)` at the last grid point not after `u`.
    pub fn value_at(&self, u: f64) -> f64 {
        let j = ((u / self.du + 1e-9).floor() as usize).min(self.values.len() - 1);
        self.values[j]
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else if beta >= 1.0 {
        Err(Error::Integrability(format!("order {beta} reached 1")))
    } else {
        Err(Error::param("beta", format!("order must lie in (0, 1), got {beta}")))
    }
}

/// Euler scheme freezing the order on each step of the `u` grid.
pub fn simulate_subordinator(
    beta_of_u: impl Fn(f64) -> f64,
    s0: f64,
    u_end: f64,
    du: f64,
    rng: &mut RngStream,
) -> Result<SubordinatorPath> {
    if !(du > 0.0 && u_end >= 0.0) {
        return Err(Error::param("du", "need du > 0 and u_end >= 0"));
    }
    let steps = (u_end / du - 1e-9).ceil().max(0.0) as usize;
    let mut values = Vec::with_capacity(steps + 1);
    let mut betas = Vec::with_capacity(steps);
    values.push(s0);
    let mut s = s0;
    for j in 0..steps {
        let beta = beta_of_u(j as f64 * du);
        check_beta(beta)?;
        s = advance(s, increment_scale(beta, du), beta, rng);
        values.push(s);
        betas.push(beta);
    }
    Ok(SubordinatorPath { s0, du, values, betas })
}

/// First grid time `u` with `S(u) ≥ t`.
pub fn inverse_time(path: &SubordinatorPath, t: f64) -> Result<f64> {
    if !(t > path.s0) {
        return Err(Error::param("t", format!("need t > s0 = {}", path.s0)));
    }
    let j = path.values.partition_point(|&s| s < t);
    if j == path.values.len() {
        return Err(Error::Horizon(format!(
            "path stays below {t} up to u = {}",
            path.u_end()
        )));
    }
    Ok(j as f64 * path.du)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    /// Fraction of paths outside the binned range.
    pub tail_mass: f64,
}

/// Histogram estimate of the density of `S(u)` over the given bin edges.
pub fn estimate_density(paths: &[SubordinatorPath], u: f64, edges: &[f64]) -> Result<DensityEstimate> {
    if paths.is_empty() {
        return Err(Error::Statistics("density estimate needs paths".into()));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Statistics("bin edges must be strictly increasing".into()));
    }
    let mut counts = vec![0u64; edges.len() - 1];
    let mut outside = 0u64;
    for p in paths {
        if u > p.u_end() + 1e-12 {
            return Err(Error::Horizon(format!("path ends at {} before u = {u}", p.u_end())));
        }
        let s = p.value_at(u);
        if s < edges[0] || s >= edges[edges.len() - 1] {
            outside += 1;
            continue;
        }
        let b = edges.partition_point(|&e| e <= s) - 1;
        counts[b] += 1;
    }
    let n = paths.len() as f64;
    if outside == paths.len() as u64 {
        return Err(Error::Statistics("every sample fell outside the bins".into()));
    }
    let density = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| c as f64 / (n * (w[1] - w[0])))
        .collect();
    Ok(DensityEstimate {
        edges: edges.to_vec(),
        density,
        tail_mass: outside as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Direct,
    FormulaPath,
    FormulaDensity,
}

impl Method {
    fn label(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::FormulaPath => "formula-path",
            Method::FormulaDensity => "formula-density",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: u64,
    pub method: Method,
    pub cutoff: Option<f64>,
    pub du: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub n_paths: u64,
    pub du: f64,
    pub seed: u64,
    /// Number of horizon doublings allowed for the flow.
    pub max_extensions: u32,
    /// Bins on `[s0, t]` for the density variant.
    pub density_bins: usize,
}

impl EstimatorSettings {
    pub fn new(n_paths: u64, du: f64, seed: u64) -> Self {
        Self {
            n_paths,
            du,
            seed,
            max_extensions: 12,
            density_bins: 200,
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::param("n_paths", "need at least one path"));
        }
        if !(self.du > 0.0) {
            return Err(Error::param("du", "must be positive"));
        }
        if self.density_bins == 0 {
            return Err(Error::param("density_bins", "need at least one bin"));
        }
        Ok(())
    }
}

/// `β`, increment scale and `F(M(u))` at the path grid nodes, read from the flow.
struct NodeTable {
    betas: Vec<f64>,
    scales: Vec<f64>,
    fvals: Vec<f64>,
}

impl NodeTable {
    fn build(flow: &FlowSolution, functional: &TestFunctional, du: f64) -> Result<Self> {
        let nodes = (flow.horizon() / du + 1e-9).floor() as usize + 1;
        let fnodes = flow.functional_nodes(functional);
        let times = flow.times();
        let interp = |vals: &[f64], u: f64| {
            let j = times.partition_point(|&t| t <= u).saturating_sub(1);
            if j + 1 >= times.len() {
                vals[times.len() - 1]
            } else {
                let w = (u - times[j]) / (times[j + 1] - times[j]);
                (1.0 - w) * vals[j] + w * vals[j + 1]
            }
        };
        let mut betas = Vec::with_capacity(nodes);
        let mut scales = Vec::with_capacity(nodes);
        let mut fvals = Vec::with_capacity(nodes);
        for j in 0..nodes {
            let u = j as f64 * du;
            let beta = interp(flow.betas(), u);
            check_beta(beta)?;
            betas.push(beta);
            scales.push(increment_scale(beta, du));
            fvals.push(interp(&fnodes, u));
        }
        Ok(Self { betas, scales, fvals })
    }
}

/// Marker for a path that outran the flow horizon.
struct OutOfHorizon;

/// `(t - S)^(-β)`; exponent zero gives the plain occupation integrand.
#[inline]
fn singular_factor(gap: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        1.0
    } else {
        gap.powf(-beta)
    }
}

/// Trapezoid weight (in units of `du`) of node `j` restricted to `[lo, hi]`.
#[inline]
fn node_weight(j: usize, du: f64, lo: f64, hi: f64) -> f64 {
    let u = j as f64 * du;
    if u < lo - 1e-12 * du || u > hi + 1e-12 * du {
        return 0.0;
    }
    let first = u - du < lo - 1e-12 * du;
    let last = u + du > hi + 1e-12 * du;
    match (first, last) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 0.5,
        _ => 1.0,
    }
}

/// Bin-averaged `(t - S)^(-β)` over the bin of `[s0, t]` containing `s`.
#[inline]
fn binned_factor(s: f64, s0: f64, t: f64, bins: usize, beta: f64) -> f64 {
    let w = (t - s0) / bins as f64;
    let b = (((s - s0) / w).floor() as usize).min(bins - 1);
    let (lo, hi) = (s0 + b as f64 * w, s0 + (b + 1) as f64 * w);
    let p = 1.0 - beta;
    ((t - lo).powf(p) - (t - hi).max(0.0).powf(p)) / (p * w)
}

#[allow(clippy::too_many_arguments)]
fn path_value(
    method: Method,
    table: &NodeTable,
    s0: f64,
    t: f64,
    du: f64,
    window: (f64, f64),
    bins: usize,
    rng: &mut RngStream,
) -> std::result::Result<f64, OutOfHorizon> {
    let nodes = table.betas.len();
    let mut s = s0;
    let mut acc = 0.0;
    let mut j = 0;
    // Invariant: s = S(j du) < t.
    loop {
        match method {
            Method::Direct => {}
            Method::FormulaPath => {
                let w = node_weight(j, du, window.0, window.1);
                if w > 0.0 {
                    acc += w * singular_factor(t - s, table.betas[j]) * table.fvals[j];
                }
            }
            Method::FormulaDensity => {
                let w = node_weight(j, du, window.0, window.1);
                if w > 0.0 {
                    acc += w * binned_factor(s, s0, t, bins, table.betas[j]) * table.fvals[j];
                }
            }
        }
        if j + 1 >= nodes {
            return Err(OutOfHorizon);
        }
        s = advance(s, table.scales[j], table.betas[j], rng);
        j += 1;
        if s >= t {
            break;
        }
    }
    Ok(match method {
        Method::Direct => table.fvals[j],
        _ => acc * du,
    })
}

fn estimate(
    method: Method,
    functional: &TestFunctional,
    flow: &mut FlowSolution,
    s0: f64,
    t: f64,
    cutoff: Option<f64>,
    settings: &EstimatorSettings,
) -> Result<SolutionEstimate> {
    settings.check()?;
    if !(t > s0) {
        return Err(Error::param("t", format!("need t > s0, got s0 = {s0}, t = {t}")));
    }
    let window = match cutoff {
        None => (0.0, f64::INFINITY),
        Some(k) if k > 1.0 => (1.0 / k, k),
        Some(k) => return Err(Error::param("cutoff", format!("need K > 1, got {k}"))),
    };
    let seed = substream_seed(settings.seed, method.label());
    let mut results: Vec<Option<f64>> = vec![None; settings.n_paths as usize];
    let mut extensions = 0;
    loop {
        let table = NodeTable::build(flow, functional, settings.du)?;
        results
            .par_iter_mut()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .for_each(|(p, r)| {
                let mut rng = RngStream::new(seed, p as u64);
                *r = path_value(method, &table, s0, t, settings.du, window, settings.density_bins, &mut rng).ok();
            });
        if results.iter().all(Option::is_some) {
            break;
        }
        if extensions == settings.max_extensions {
            let missing = results.iter().filter(|r| r.is_none()).count();
            return Err(Error::Horizon(format!(
                "{missing} paths still below t = {t} at flow horizon {} after {extensions} extensions",
                flow.horizon()
            )));
        }
        let next = (2.0 * flow.horizon()).max(t - s0).max(4.0 * settings.du);
        flow.extend_to(next)?;
        extensions += 1;
    }
    let w: Welford = results.into_iter().map(|r| r.expect("all paths finished")).collect();
    Ok(SolutionEstimate {
        value: w.mean(),
        std_error: w.std_error(),
        n_paths: settings.n_paths,
        method,
        cutoff,
        du: settings.du,
        seed: settings.seed,
    })
}

/// `E F(M(T(t)))`: average over paths of `F` along the flow at the first
/// grid time the subordinator started at `s0` reaches `t`. The flow is
/// extended on demand.
pub fn evaluate_direct(
    functional: &TestFunctional,
    flow: &mut FlowSolution,
    s0: f64,
    t: f64,
    settings: &EstimatorSettings,
) -> Result<SolutionEstimate> {
    estimate(Method::Direct, functional, flow, s0, t, None, settings)
}

/// Path form of the solution formula:
/// `E ∫_{1/K}^{K} (t - S(u))^(-β(u)) 1(S(u) < t) F(M(u)) du`, trapezoid on
/// the path grid. `cutoff = None` integrates over all `u ≥ 0`.
pub fn evaluate_formula(
    functional: &TestFunctional,
    flow: &mut FlowSolution,
    s0: f64,
    t: f64,
    cutoff: Option<f64>,
    settings: &EstimatorSettings,
) -> Result<SolutionEstimate> {
    estimate(Method::FormulaPath, functional, flow, s0, t, cutoff, settings)
}

/// The same double integral with the kernel averaged over the bins of a
/// histogram of `S(u)` on `[s0, t]`. Because the histogram is an average
/// over paths, the integral is accumulated path by path, which also gives
/// its standard error.
pub fn evaluate_formula_density(
    functional: &TestFunctional,
    flow: &mut FlowSolution,
    s0: f64,
    t: f64,
    cutoff: Option<f64>,
    settings: &EstimatorSettings,
) -> Result<SolutionEstimate> {
    estimate(Method::FormulaDensity, functional, flow, s0, t, cutoff, settings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffSweep {
    pub estimates: Vec<SolutionEstimate>,
    /// The `K = ∞` value.
    pub full: SolutionEstimate,
    /// Whether `|full - estimate(K_last)|` fell below the tolerance.
    pub converged: bool,
}

/// Doubles `K` from `k0` until the cut-off estimate is within `tol` of the
/// full formula (all on the same paths), or `max_doublings` is reached.
#[allow(clippy::too_many_arguments)]
pub fn formula_cutoff_sweep(
    functional: &TestFunctional,
    flow: &mut FlowSolution,
    s0: f64,
    t: f64,
    k0: f64,
    tol: f64,
    max_doublings: u32,
    settings: &EstimatorSettings,
) -> Result<CutoffSweep> {
    let full = evaluate_formula(functional, flow, s0, t, None, settings)?;
    let mut estimates = Vec::new();
    let mut k = k0;
    let mut converged = false;
    for _ in 0..=max_doublings {
        let e = evaluate_formula(functional, flow, s0, t, Some(k), settings)?;
        let gap = (e.value - full.value).abs();
        estimates.push(e);
        if gap < tol {
            converged = true;
            break;
        }
        k *= 2.0;
    }
    Ok(CutoffSweep {
        estimates,
        full,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic::solve_flow_grid;
    use crate::model::{GridDensity, ModelSpec, Observable};

    fn drift_flow(c: f64) -> FlowSolution {
        let spec = ModelSpec::simple((-2.0, 6.0), 0.0, c, 0.5).unwrap();
        let mu0 = GridDensity::gaussian(-2.0, 6.0, 200, 0.0, 0.3).unwrap();
        solve_flow_grid(&mu0, 0.5, 0.01, &spec).unwrap()
    }

    #[test]
    fn half_order_scale() {
        // (du Γ(½))² = π du².
        let s = increment_scale(0.5, 0.1);
        assert!((s - std::f64::consts::PI * 0.01).abs() < 1e-14);
    }

    #[test]
    fn paths_are_strictly_increasing() {
        let mut rng = RngStream::new(1, 0);
        let p = simulate_subordinator(|u| 0.3 + 0.2 * u, 0.5, 1.0, 1e-3, &mut rng).unwrap();
        assert_eq!(p.values[0], 0.5);
        assert!(p.values.windows(2).all(|w| w[1] > w[0]));
        assert!(simulate_subordinator(|_| 1.0, 0.0, 1.0, 0.1, &mut rng).is_err());
    }

    #[test]
    fn inverse_time_first_step_and_monotone() {
        let mut rng = RngStream::new(2, 0);
        let p = simulate_subordinator(|_| 0.5, 0.0, 5.0, 0.01, &mut rng).unwrap();
        assert_eq!(inverse_time(&p, p.values[1] * 0.5).unwrap(), 0.01);
        let mut last = 0.0;
        for t in [0.01, 0.1, 0.5, 1.0] {
            if let Ok(u) = inverse_time(&p, t) {
                assert!(u >= last);
                last = u;
            }
        }
        assert!(matches!(inverse_time(&p, 1e12), Err(Error::Horizon(_))));
    }

    #[test]
    fn histogram_normalizes() {
        let paths: Vec<_> = (0..2000)
            .map(|i| simulate_subordinator(|_| 0.5, 0.0, 1.0, 0.1, &mut RngStream::new(3, i)).unwrap())
            .collect();
        let max = paths.iter().map(|p| p.value_at(1.0)).fold(0.0, f64::max);
        let edges: Vec<f64> = (0..=50).map(|i| i as f64 * (max * 1.01) / 50.0).collect();
        let d = estimate_density(&paths, 1.0, &edges).unwrap();
        let mass: f64 = d.density.iter().zip(edges.windows(2)).map(|(v, w)| v * (w[1] - w[0])).sum();
        assert!((mass - 1.0).abs() < 1e-12 && d.tail_mass == 0.0);
    }

    #[test]
    fn constant_functional_has_zero_variance() {
        let mut flow = drift_flow(0.5);
        let f = TestFunctional::linear(Observable::Constant { value: 1.0 });
        let e = evaluate_direct(&f, &mut flow, 0.0, 1.0, &EstimatorSettings::new(500, 0.01, 4)).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
        assert!(e.std_error < 1e-12);
    }

    #[test]
    fn flow_is_extended_on_demand() {
        let mut flow = drift_flow(0.5);
        let before = flow.horizon();
        let f = TestFunctional::linear(Observable::Identity);
        evaluate_direct(&f, &mut flow, 0.0, 1.0, &EstimatorSettings::new(300, 0.01, 4)).unwrap();
        assert!(flow.horizon() > before);
    }

    #[test]
    fn cutoff_probability_grows_with_k() {
        let mut flow = drift_flow(0.0);
        let f = TestFunctional::linear(Observable::Constant { value: 1.0 });
        let st = EstimatorSettings::new(4000, 0.005, 8);
        let mut last = 0.0;
        for k in [2.0, 8.0, 64.0] {
            let e = evaluate_formula(&f, &mut flow, 0.0, 1.0, Some(k), &st).unwrap();
            assert!(e.value >= last - 1e-12);
            last = e.value;
        }
        let full = evaluate_formula(&f, &mut flow, 0.0, 1.0, None, &st).unwrap();
        assert!((full.value - 1.0).abs() < 4.0 * full.std_error + 0.02, "{full:?}");
    }

    #[test]
    fn zero_exponent_guard() {
        assert_eq!(singular_factor(0.3, 0.0), 1.0);
    }

    #[test]
    fn binned_factor_averages_kernel() {
        // One bin over [0, 1], β = ½: ∫_0^1 (1-S)^{-½} dS = 2.
        assert!((binned_factor(0.4, 0.0, 1.0, 1, 0.5) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_weights() {
        assert_eq!(node_weight(0, 0.1, 0.0, f64::INFINITY), 0.5);
        assert_eq!(node_weight(3, 0.1, 0.0, f64::INFINITY), 1.0);
        assert_eq!(node_weight(2, 0.1, 0.25, 1.0), 0.0);
        assert_eq!(node_weight(3, 0.1, 0.25, 1.0), 0.5);
        assert_eq!(node_weight(10, 0.1, 0.25, 1.0), 0.5);
    }
}
