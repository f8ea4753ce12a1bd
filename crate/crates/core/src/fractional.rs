//! The variable-order right Caputo-type operator, the limit generator of the
//! chain, and the residual check of the mixed fractional equation.
//!
//! The operator acting on a profile `g` on `[s, t]` is
//! `D g(s) = -β ∫_0^L (g(s+y) - g(s)) y^(-1-β) dy - (g(t) - g(s)) L^(-β)`
//! with `L = t - s`; the boundary term is the closed form of the kernel
//! integral beyond `L` with `g` frozen at `g(t)`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_order, Error, Result};
use crate::kinetic::FlowSolution;
use crate::model::{mean_field_drift, Measure, ModelSpec, TestFunctional};
use crate::quad::{stable_from, Quadrature};
use crate::random::{onesided_stable_unchecked, substream_seed, RngStream};
use crate::stats::{ks_two_sample, KsResult, Welford};
use crate::subordinator::increment_scale;

/// Samples of `g` on a grid of `[s, t]` graded toward `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeProfile {
    /// Absolute times, increasing, first `s`, last `t`.
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
}

/// Offsets `y_j = L (j/J)^(1/(1-β))`, `j = 0..=J`.
pub fn graded_offsets(length: f64, intervals: usize, grading_beta: f64) -> Vec<f64> {
    let p = 1.0 / (1.0 - grading_beta);
    (0..=intervals)
        .map(|j| {
            if j == intervals {
                length
            } else {
                length * (j as f64 / intervals as f64).powf(p)
            }
        })
        .collect()
}

impl TimeProfile {
    pub fn graded(s: f64, t: f64, intervals: usize, grading_beta: f64, g: impl Fn(f64) -> f64) -> Result<Self> {
        if !(s < t) {
            return Err(Error::param("s", format!("need s < t, got s = {s}, t = {t}")));
        }
        if intervals == 0 {
            return Err(Error::param("intervals", "need at least one interval"));
        }
        check_order("grading_beta", grading_beta)?;
        let nodes: Vec<f64> = graded_offsets(t - s, intervals, grading_beta)
            .into_iter()
            .map(|y| if y == t - s { t } else { s + y })
            .collect();
        let values = nodes.iter().map(|&x| g(x)).collect();
        Ok(Self { nodes, values })
    }

    pub fn terminal(&self) -> f64 {
        *self.nodes.last().expect("profile has nodes")
    }
}

/// Linear weights `c_j` with `D g(s) = Σ_j c_j g(s + y_j)` for `g`
/// interpolated linearly between the offsets `y` (`y_0 = 0`, `y_last = L`).
/// Each cell's kernel moments are integrated exactly, which absorbs the
/// singularity against the local linear part of `g`.
pub fn caputo_weights(offsets: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_order("beta", beta)?;
    if offsets.len() < 2 || offsets[0] != 0.0 || offsets.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("offsets", "need increasing offsets starting at 0"));
    }
    let n = offsets.len();
    let length = offsets[n - 1];
    let p = 1.0 - beta;
    // ∫ h(y) y^(-1-β) dy with h linear on each cell, h(0) = 0.
    let mut w = vec![0.0; n];
    for j in 0..n - 1 {
        let (a, b) = (offsets[j], offsets[j + 1]);
        let d = b - a;
        // Moments m0 = ∫_a^b y^(-1-β), m1 = ∫_a^b y^(-β).
        let m1 = (b.powf(p) - a.powf(p)) / p;
        if a == 0.0 {
            // h(y) = h_1 y / b on the first cell.
            w[j + 1] += m1 / b;
        } else {
            let m0 = (a.powf(-beta) - b.powf(-beta)) / beta;
            // h = h_a (b - y)/d + h_b (y - a)/d
            w[j] += (b * m0 - m1) / d;
            w[j + 1] += (m1 - a * m0) / d;
        }
    }
    // h_j = g_j - g_0: the integral's weights on g_0 are minus their sum.
    let sum: f64 = w[1..].iter().sum();
    w[0] = -sum;
    let mut c: Vec<f64> = w.iter().map(|v| -beta * v).collect();
    let boundary = length.powf(-beta);
    c[n - 1] -= boundary;
    c[0] += boundary;
    Ok(c)
}

/// `D g(s)` for a profile whose grid starts at `s`.
pub fn right_caputo_variable(profile: &TimeProfile, beta: f64, s: f64) -> Result<f64> {
    let start = profile.nodes.iter().position(|&x| x == s).ok_or_else(|| {
        Error::param("s", format!("{s} is not a node of the profile"))
    })?;
    if start + 1 >= profile.nodes.len() {
        return Err(Error::param("s", "need s < t"));
    }
    let offsets: Vec<f64> = profile.nodes[start..].iter().map(|x| x - s).collect();
    let c = caputo_weights(&offsets, beta)?;
    Ok(apply_weights(&c, |j| profile.values[start + j]))
}

/// `Σ_j c_j g_j`, written as `Σ_{j≥1} c_j (g_j - g_0)` since the weights
/// sum to zero; this avoids cancellation between the large near-singular weights.
#[inline]
fn apply_weights(c: &[f64], g: impl Fn(usize) -> f64) -> f64 {
    let g0 = g(0);
    c.iter().enumerate().skip(1).map(|(j, c)| c * (g(j) - g0)).sum()
}

/// `D g(s)` on a fresh graded grid of `intervals` cells, with a refinement
/// check: fails when halving the grid moves the value by more than `tol`.
pub fn right_caputo_fn(
    g: impl Fn(f64) -> f64,
    beta: f64,
    s: f64,
    t: f64,
    intervals: usize,
    tol: f64,
) -> Result<f64> {
    let fine = TimeProfile::graded(s, t, intervals, beta, &g)?;
    let value = right_caputo_variable(&fine, beta, s)?;
    let coarse = TimeProfile::graded(s, t, (intervals / 2).max(1), beta, &g)?;
    let rough = right_caputo_variable(&coarse, beta, s)?;
    let error = (value - rough).abs() / 3.0;
    if error > tol {
        return Err(Error::Quadrature {
            estimate: value,
            error,
            tolerance: tol,
        });
    }
    Ok(value)
}

/// Spatial part: `(1/(a,μ)) ∫ a(z) (L_μ δF/δμ)(z) μ(dz)` with
/// `L_μ = ½ G ∂² + b_μ ∂`.
pub fn rhs_spatial(functional: &TestFunctional, mu: &dyn Measure, spec: &ModelSpec) -> f64 {
    let m = functional.pairing(mu);
    let total_a = mu.pair(&|z| spec.a(z));
    let integrand = |z: f64| {
        let [_, d1, d2] = functional.variational(m, z);
        spec.a(z) * (0.5 * spec.g(z) * d2 + mean_field_drift(z, mu, spec) * d1)
    };
    mu.pair(&integrand) / total_a
}

/// Temporal part `β ∫_0^∞ (F(μ, s+r) - F(μ, s)) r^(-1-β) dr` at `β = alpha (a, μ)`.
pub fn temporal_part(
    functional: &TestFunctional,
    mu: &dyn Measure,
    s: f64,
    spec: &ModelSpec,
    quad: &Quadrature,
) -> Result<f64> {
    let Some(psi) = functional.s_factor else {
        return Ok(0.0);
    };
    let beta = crate::model::order_of(mu, spec);
    let breaks: Vec<f64> = psi.breakpoints().iter().map(|b| b - s).filter(|&y| y > 0.0).collect();
    let r = stable_from(quad, |y| psi.increment(s, y), 0.0, beta, &breaks)?;
    Ok(functional.measure_value(mu) * beta * r.value)
}

/// The limit generator applied to `F(μ, s) = Φ((f, μ)) ψ(s)`.
pub fn limit_generator_apply(
    functional: &TestFunctional,
    mu: &dyn Measure,
    s: f64,
    spec: &ModelSpec,
    quad: &Quadrature,
) -> Result<f64> {
    let temporal = temporal_part(functional, mu, s, spec, quad)?;
    Ok(temporal + functional.psi(s) * rhs_spatial(functional, mu, spec))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSettings {
    pub n_paths: u64,
    pub du: f64,
    pub seed: u64,
    /// Graded cells per evaluation point.
    pub intervals: usize,
    pub max_extensions: u32,
    /// Paths per side in the shift-identity two-sample test.
    pub shift_check_paths: u64,
}

impl ResidualSettings {
    pub fn new(n_paths: u64, du: f64, intervals: usize, seed: u64) -> Self {
        Self {
            n_paths,
            du,
            seed,
            intervals,
            max_extensions: 12,
            shift_check_paths: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub s: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub mc_error: f64,
}

impl ResidualRow {
    pub fn within(&self, k: f64) -> bool {
        self.residual.abs() <= k * self.mc_error
    }

    /// The residual is smaller than its own error bar.
    pub fn noise_dominated(&self) -> bool {
        self.residual.abs() < self.mc_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub t: f64,
    pub beta: f64,
    pub rows: Vec<ResidualRow>,
    /// `g(t)` as reconstructed, and `F(μ0)`.
    pub terminal_value: f64,
    pub terminal_expected: f64,
    /// Two-sample test of `S_{μ,s}(u) - s` against `S_{μ,0}(u)`.
    pub shift_check: KsResult,
    /// Whether per-`s` simulation replaced the shift identity.
    pub used_fallback: bool,
}

impl ResidualReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        for r in &self.rows {
            w.serialize(r).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// `β(j du)`, the increment scales and `F(M(j du))` read off the flow.
struct Nodes {
    betas: Vec<f64>,
    scales: Vec<f64>,
    fvals: Vec<f64>,
}

fn nodes_from_flow(flow: &FlowSolution, functional: &TestFunctional, du: f64) -> Result<Nodes> {
    let count = (flow.horizon() / du + 1e-9).floor() as usize + 1;
    let mut betas = Vec::with_capacity(count);
    let mut scales = Vec::with_capacity(count);
    let mut fvals = Vec::with_capacity(count);
    for j in 0..count {
        let u = j as f64 * du;
        let beta = flow.beta_at(u)?;
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Integrability(format!("order {beta} at u = {u}")));
        }
        betas.push(beta);
        scales.push(increment_scale(beta, du));
        fvals.push(crate::kinetic::flow_functional(functional, flow, u)?);
    }
    Ok(Nodes { betas, scales, fvals })
}

/// `F(M(T(w)))` for every level in `levels` (sorted ascending, all `≥ 0`)
/// along one path started at zero; `None` if the path outruns the table.
///
/// The passage time is interpolated linearly inside the step that crosses
/// `w`. Rounding it up to the grid instead makes each path's profile a step
/// function, and the near-singular weights of the operator then turn the
/// rare grid jumps just below the end level into a per-path estimator with
/// tail index `1/β` (infinite variance for `β > 1/2`).
fn levels_along_path(nodes: &Nodes, levels: &[f64], rng: &mut RngStream) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(levels.len());
    let mut prev = 0.0;
    let mut s = 0.0;
    let mut j = 0usize;
    for &w in levels {
        while s < w {
            if j + 1 >= nodes.betas.len() {
                return None;
            }
            let next = s + nodes.scales[j] * onesided_stable_unchecked(nodes.betas[j], rng);
            prev = s;
            s = if next > s { next } else { s.next_up() };
            j += 1;
        }
        if j == 0 {
            // T(0) = 0: zero inverse time at the terminal point.
            out.push(nodes.fvals[0]);
        } else {
            let theta = ((w - prev) / (s - prev)).clamp(0.0, 1.0);
            out.push(nodes.fvals[j - 1] + theta * (nodes.fvals[j] - nodes.fvals[j - 1]));
        }
    }
    Some(out)
}

/// Runs `n` paths to the largest level, extending the flow as needed.
fn simulate_levels(
    flow: &mut FlowSolution,
    functional: &TestFunctional,
    levels: &[f64],
    seed: u64,
    n: u64,
    du: f64,
    max_extensions: u32,
) -> Result<Vec<Vec<f64>>> {
    let mut results: Vec<Option<Vec<f64>>> = vec![None; n as usize];
    let top = levels.last().copied().unwrap_or(0.0);
    for attempt in 0..=max_extensions {
        let nodes = nodes_from_flow(flow, functional, du)?;
        results
            .par_iter_mut()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .for_each(|(p, r)| {
                let mut rng = RngStream::new(seed, p as u64);
                *r = levels_along_path(&nodes, levels, &mut rng);
            });
        if results.iter().all(Option::is_some) {
            return Ok(results.into_iter().map(|r| r.expect("checked")).collect());
        }
        if attempt < max_extensions {
            flow.extend_to((2.0 * flow.horizon()).max(top).max(4.0 * du))?;
        }
    }
    Err(Error::Horizon(format!(
        "subordinator paths stay below {top} at flow horizon {}",
        flow.horizon()
    )))
}

/// Values of `S(u) - s` for paths started at `s`, on streams of `seed`.
fn shifted_samples(flow: &FlowSolution, s: f64, u: f64, du: f64, n: u64, seed: u64) -> Result<Vec<f64>> {
    let steps = (u / du + 1e-9).round() as usize;
    let mut betas = Vec::with_capacity(steps);
    for j in 0..steps {
        betas.push(flow.beta_at(j as f64 * du)?);
    }
    let scales: Vec<f64> = betas.iter().map(|&b| increment_scale(b, du)).collect();
    Ok((0..n)
        .into_par_iter()
        .map(|p| {
            let mut rng = RngStream::new(seed, p);
            let mut x = s;
            for j in 0..steps {
                x += scales[j] * onesided_stable_unchecked(betas[j], &mut rng);
            }
            x - s
        })
        .collect())
}

/// Level of significance below which the shift identity is rejected.
pub const SHIFT_CHECK_LEVEL: f64 = 0.001;

/// Residual of the mixed fractional equation at the points `s_points` of `[0, t)`.
///
/// Reconstructs `g(s) = E F(M(T_{μ0,s}(t)))` as `Φ(t - s)` with
/// `Φ(w) = E F(M(T_{μ0,0}(w)))` from one path ensemble, applies the right
/// operator of order `alpha (a, μ0)` on a graded grid at each `s`, and
/// subtracts the spatial right-hand side at `μ0`. Error bars come from the
/// per-path values of the (linear) left side.
pub fn mixed_equation_residual(
    functional: &TestFunctional,
    flow: &mut FlowSolution,
    t: f64,
    s_points: &[f64],
    settings: &ResidualSettings,
) -> Result<ResidualReport> {
    if !(t > 0.0) {
        return Err(Error::param("t", "must be positive"));
    }
    if let Some(&s) = s_points.iter().find(|&&s| !(s >= 0.0 && s < t)) {
        return Err(Error::param("s_points", format!("{s} lies outside [0, t)")));
    }
    let spec = flow.spec().clone();
    let mu0 = flow.measures()[0].clone();
    let beta = crate::model::order_of(mu0.as_measure(), &spec);
    let rhs = rhs_spatial(functional, mu0.as_measure(), &spec);
    let terminal_expected = functional.measure_value(mu0.as_measure());

    // Shift identity check between starting points 0 and t/2.
    let s_mid = 0.5 * t;
    let u_check = (0.5f64).min(flow.horizon()).max(settings.du);
    let a = shifted_samples(flow, 0.0, u_check, settings.du, settings.shift_check_paths, substream_seed(settings.seed, "shift-base"))?;
    let b = shifted_samples(flow, s_mid, u_check, settings.du, settings.shift_check_paths, substream_seed(settings.seed, "shift-moved"))?;
    let shift_check = ks_two_sample(&a, &b)?;
    let used_fallback = shift_check.p_value < SHIFT_CHECK_LEVEL;

    let mut rows = Vec::with_capacity(s_points.len());
    let mut terminal_value = f64::NAN;
    let seed = substream_seed(settings.seed, "residual");
    for (k, &s) in s_points.iter().enumerate() {
        let length = t - s;
        let offsets = graded_offsets(length, settings.intervals, beta);
        let weights = caputo_weights(&offsets, beta)?;
        // g(s + y) = Φ(L - y): levels ascending as y descends.
        let levels: Vec<f64> = offsets.iter().rev().map(|y| (length - y).max(0.0)).collect();
        let stream = if used_fallback { substream_seed(seed, &format!("s{k}")) } else { seed };
        let per_path = simulate_levels(flow, functional, &levels, stream, settings.n_paths, settings.du, settings.max_extensions)?;
        let mut lhs = Welford::new();
        for vals in &per_path {
            // vals[i] is Φ at levels[i], i.e. g at offsets[len-1-i].
            let n = vals.len();
            let v = apply_weights(&weights, |j| vals[n - 1 - j]);
            lhs.push(v);
            if terminal_value.is_nan() {
                terminal_value = vals[0];
            }
        }
        rows.push(ResidualRow {
            s,
            lhs: lhs.mean(),
            rhs,
            residual: lhs.mean() - rhs,
            mc_error: lhs.std_error(),
        });
    }
    Ok(ResidualReport {
        t,
        beta,
        rows,
        terminal_value,
        terminal_expected,
        shift_check,
        used_fallback,
    })
}
