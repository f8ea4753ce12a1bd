//! The mean-field particle chain with power-tail waiting times and its
//! scaled inverse-time evaluation.
//!
//! One step: draw a Pareto waiting factor `r` with tail order
//! `β = alpha (a, μ)`, select particle `i` with probability `a(x_i)/A(x)`,
//! move it by `h y` with `y` from the two-atom kernel, and advance the time
//! coordinate by `unit^(1/β) r`, where `unit` is the operational time one
//! step represents (see [`Clock`]).
//!
//! Random draws per step, in order: waiting factor, selection, jump sign.
//! [`chain_step`] is the literal reference; [`ChainRunner`] is the fast
//! equivalent used for long runs and consumes the stream identically.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    mean_field_drift, total_intensity, EmpiricalMeasure, Interaction, ModelSpec,
    TestFunctional,
};
use crate::quad::{stable_from, Quadrature};
use crate::random::RngStream;

/// Operational time carried by one chain step.
///
/// With `τ = 1/N = h²`, moving a single particle by `h y` shifts the
/// empirical measure's generator by `τ h² L`, so a step is worth `τ h²`
/// units of the limiting dynamics. `Diffusive` uses that unit for both the
/// waiting-time scale and the inverse-time count. `Coupled` uses `τ` for
/// both, which keeps the waiting-time law literal but slows the spatial
/// part by a factor `h²` relative to the temporal part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    Coupled,
    #[default]
    Diffusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrwParams {
    n: usize,
    pub t_max: f64,
    pub max_steps: u64,
    pub clock: Clock,
}

pub const DEFAULT_MAX_STEPS: u64 = 100_000_000;

impl CtrwParams {
    pub fn new(n: usize, t_max: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "need at least one particle"));
        }
        if !(t_max > 0.0) {
            return Err(Error::param("t_max", "horizon must be positive"));
        }
        Ok(Self {
            n,
            t_max,
            max_steps: DEFAULT_MAX_STEPS,
            clock: Clock::default(),
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `τ = 1/N`.
    pub fn tau(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// `h = sqrt(τ)`.
    pub fn h(&self) -> f64 {
        self.tau().sqrt()
    }

    /// Operational time of one step.
    pub fn time_unit(&self) -> f64 {
        match self.clock {
            Clock::Coupled => self.tau(),
            Clock::Diffusive => self.tau() * self.tau(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub config: EmpiricalMeasure,
    pub s: f64,
    pub k: u64,
}

impl ChainState {
    pub fn new(config: EmpiricalMeasure, s: f64) -> Self {
        Self { config, s, k: 0 }
    }
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: u64,
    pub s: f64,
    pub selected_i: usize,
    pub x_i_before: f64,
    pub x_i_after: f64,
}

/// Probability of the `+sqrt(G)` atom, or a step-size error when the drift
/// bias would leave `[0, 1]`.
#[inline]
fn up_probability(x: f64, b: f64, g: f64, h: f64) -> Result<(f64, f64)> {
    let root = g.sqrt();
    let ratio = h * b.abs() / root;
    if !(ratio <= 1.0) {
        return Err(Error::StepSize { position: x, ratio });
    }
    Ok((0.5 * (1.0 + h * b / root), root))
}

#[inline]
fn jump_from_uniform(x: f64, b: f64, g: f64, h: f64, u: f64) -> Result<f64> {
    let (p, root) = up_probability(x, b, g, h)?;
    Ok(if u < p { root } else { -root })
}

/// Two-atom jump `y = ±sqrt(G(x_i))` biased by the mean-field drift so that
/// `E y = h b_μ(x_i)` and `E y² = G(x_i)`.
pub fn jump_kernel_sample(
    x_i: f64,
    mu: &EmpiricalMeasure,
    spec: &ModelSpec,
    h: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    let b = mean_field_drift(x_i, mu, spec);
    jump_from_uniform(x_i, b, spec.g(x_i), h, rng.open01())
}

/// Waiting-time increment `(unit / U)^(1/β)`, i.e. `unit^(1/β) r` with
/// `r = U^(-1/β)` Pareto.
#[inline]
fn waiting_increment(unit: f64, beta: f64, u: f64) -> f64 {
    (unit / u).powf(1.0 / beta)
}

/// Literal transition: O(N) per step. Use [`ChainRunner`] for long runs.
pub fn chain_step(
    state: &ChainState,
    params: &CtrwParams,
    spec: &ModelSpec,
    rng: &mut RngStream,
) -> Result<(ChainState, StepRecord)> {
    if state.config.len() != params.n {
        return Err(Error::param("config", "particle count differs from params.n"));
    }
    let intensity = total_intensity(&state.config, spec);
    let beta = spec.alpha() * intensity.mean;
    let ds = waiting_increment(params.time_unit(), beta, rng.unit_upper());

    let target = rng.open01() * intensity.total;
    let xs = state.config.positions();
    let mut acc = 0.0;
    let mut i = xs.len() - 1;
    for (j, &x) in xs.iter().enumerate() {
        acc += spec.a(x);
        if acc > target {
            i = j;
            break;
        }
    }

    let before = xs[i];
    let y = jump_kernel_sample(before, &state.config, spec, params.h(), rng)?;
    let after = before + params.h() * y;
    let mut next = xs.to_vec();
    next[i] = after;
    let s = strictly_after(state.s, state.s + ds);
    let k = state.k + 1;
    Ok((
        ChainState {
            config: EmpiricalMeasure::new(next)?,
            s,
            k,
        },
        StepRecord {
            k,
            s,
            selected_i: i,
            x_i_before: before,
            x_i_after: after,
        },
    ))
}

/// Binary indexed tree over nonnegative weights, for `a`-weighted selection.
#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0.0; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            let mut j = i + 1;
            while j <= n {
                tree[j] += w;
                j += j & j.wrapping_neg();
            }
        }
        Self { tree }
    }

    fn add(&mut self, i: usize, delta: f64) {
        let n = self.tree.len() - 1;
        let mut j = i + 1;
        while j <= n {
            self.tree[j] += delta;
            j += j & j.wrapping_neg();
        }
    }

    /// Smallest `i` whose prefix sum through `i` exceeds `target`.
    fn search(&self, mut target: f64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        pos.min(n - 1)
    }
}

/// Kahan-compensated running sum, so `s` stays accurate over 10⁸ tiny increments.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = strictly_after(self.sum, self.sum + y);
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

/// `next`, or the float just above `s` when a positive increment was lost
/// to rounding. An overflowing waiting time leaves `S = ∞`, past every horizon.
#[inline]
fn strictly_after(s: f64, next: f64) -> f64 {
    if next > s || !s.is_finite() {
        next
    } else {
        s.next_up()
    }
}

/// How often the incrementally maintained sums are rebuilt from scratch.
const REFRESH_EVERY: u64 = 1 << 14;

/// Fast chain driver: O(log N) selection and O(1) drift for the
/// attraction-to-the-mean kernel.
#[derive(Debug, Clone)]
pub struct ChainRunner<'a> {
    spec: &'a ModelSpec,
    params: CtrwParams,
    positions: Vec<f64>,
    weights: Option<(Fenwick, Vec<f64>)>,
    sum_a: f64,
    sum_x: f64,
    s: Compensated,
    k: u64,
}

impl<'a> ChainRunner<'a> {
    pub fn new(state: ChainState, params: CtrwParams, spec: &'a ModelSpec) -> Result<Self> {
        if state.config.len() != params.n {
            return Err(Error::param("config", "particle count differs from params.n"));
        }
        if !(spec.g_bounds().0 > 0.0) {
            return Err(Error::param(
                "diffusion",
                "the particle chain needs G bounded below by a positive constant",
            ));
        }
        let positions = state.config.into_positions();
        let mut runner = Self {
            spec,
            params,
            positions,
            weights: None,
            sum_a: 0.0,
            sum_x: 0.0,
            s: Compensated {
                sum: state.s,
                carry: 0.0,
            },
            k: state.k,
        };
        runner.refresh();
        Ok(runner)
    }

    fn refresh(&mut self) {
        let spec = self.spec;
        if spec.intensity().is_constant() {
            self.sum_a = self.positions.iter().map(|&x| spec.a(x)).sum();
        } else {
            let w: Vec<f64> = self.positions.iter().map(|&x| spec.a(x)).collect();
            self.sum_a = w.iter().sum();
            self.weights = Some((Fenwick::new(&w), w));
        }
        self.sum_x = self.positions.iter().sum();
    }

    pub fn s(&self) -> f64 {
        self.s.sum
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn state(&self) -> ChainState {
        ChainState {
            config: EmpiricalMeasure::new(self.positions.clone()).expect("non-empty configuration"),
            s: self.s.sum,
            k: self.k,
        }
    }

    #[inline]
    fn drift_at(&self, x: f64) -> f64 {
        let spec = self.spec;
        let base = spec.b0(x);
        match *spec.interaction() {
            Interaction::None => base,
            Interaction::MeanAttraction { strength } => {
                base + strength * (self.sum_x / self.positions.len() as f64 - x)
            }
            Interaction::GaussianKernel { .. } => {
                base + self.positions.iter().map(|&y| spec.kernel(x, y)).sum::<f64>()
                    / self.positions.len() as f64
            }
        }
    }

    pub fn step(&mut self, rng: &mut RngStream) -> Result<StepRecord> {
        let n = self.positions.len();
        let beta = self.spec.alpha() * self.sum_a / n as f64;
        let ds = waiting_increment(self.params.time_unit(), beta, rng.unit_upper());

        let target = rng.open01() * self.sum_a;
        let i = match &self.weights {
            None => ((target / self.spec.a(0.0)) as usize).min(n - 1),
            Some((tree, _)) => tree.search(target),
        };

        let before = self.positions[i];
        let h = self.params.h();
        let y = jump_from_uniform(before, self.drift_at(before), self.spec.g(before), h, rng.open01())?;
        let after = before + h * y;
        self.positions[i] = after;
        self.sum_x += after - before;
        if let Some((tree, w)) = &mut self.weights {
            let new_w = self.spec.a(after);
            let delta = new_w - w[i];
            if delta != 0.0 {
                tree.add(i, delta);
                w[i] = new_w;
                self.sum_a += delta;
            }
        }
        self.s.add(ds);
        self.k += 1;
        if self.k % REFRESH_EVERY == 0 {
            self.refresh();
        }
        Ok(StepRecord {
            k: self.k,
            s: self.s.sum,
            selected_i: i,
            x_i_before: before,
            x_i_after: after,
        })
    }
}

/// Result of running the chain to the first passage of level `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrwOutcome {
    pub config: EmpiricalMeasure,
    /// `k * unit` at the first step with `S ≥ t`.
    pub inverse_time: f64,
    pub steps: u64,
    pub final_s: f64,
}

/// Runs the chain from `(μ0, s0)` until the time coordinate first reaches
/// `t` and returns the configuration there. Optionally records every step.
pub fn scaled_ctrw_evaluate(
    mu0: &EmpiricalMeasure,
    s0: f64,
    t: f64,
    params: &CtrwParams,
    spec: &ModelSpec,
    rng: &mut RngStream,
    mut trajectory: Option<&mut Vec<StepRecord>>,
) -> Result<CtrwOutcome> {
    if !(s0 < t) {
        return Err(Error::param("t", format!("need s0 < t, got s0 = {s0}, t = {t}")));
    }
    let mut runner = ChainRunner::new(ChainState::new(mu0.clone(), s0), *params, spec)?;
    loop {
        if runner.k() >= params.max_steps {
            return Err(Error::Horizon(format!(
                "{} steps taken without reaching t = {t} (S = {})",
                runner.k(),
                runner.s()
            )));
        }
        let rec = runner.step(rng)?;
        if let Some(tr) = trajectory.as_deref_mut() {
            tr.push(rec);
        }
        if runner.s() >= t {
            break;
        }
    }
    Ok(CtrwOutcome {
        inverse_time: runner.k() as f64 * params.time_unit(),
        steps: runner.k(),
        final_s: runner.s(),
        config: runner.state().config,
    })
}

/// Runs exactly `steps` transitions (the Markov chain at time `steps * unit`).
pub fn run_steps(
    mu0: &EmpiricalMeasure,
    s0: f64,
    steps: u64,
    params: &CtrwParams,
    spec: &ModelSpec,
    rng: &mut RngStream,
) -> Result<ChainState> {
    let mut runner = ChainRunner::new(ChainState::new(mu0.clone(), s0), *params, spec)?;
    for _ in 0..steps {
        runner.step(rng)?;
    }
    Ok(runner.state())
}

/// Per-replica summary, keyed by stream id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSummary {
    pub stream_id: u64,
    pub inverse_time: f64,
    pub steps: u64,
    pub final_s: f64,
    pub functional: f64,
}

/// Runs `replicas` independent first-passage evaluations on streams
/// `0..replicas` of `seed` and evaluates `F` on each final configuration.
/// Output order is by stream id regardless of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_replicas(
    functional: &TestFunctional,
    mu0: &EmpiricalMeasure,
    s0: f64,
    t: f64,
    params: &CtrwParams,
    spec: &ModelSpec,
    seed: u64,
    replicas: u64,
) -> Result<Vec<ReplicaSummary>> {
    (0..replicas)
        .into_par_iter()
        .map(|id| {
            let mut rng = RngStream::new(seed, id);
            let out = scaled_ctrw_evaluate(mu0, s0, t, params, spec, &mut rng, None)?;
            Ok(ReplicaSummary {
                stream_id: id,
                inverse_time: out.inverse_time,
                steps: out.steps,
                final_s: out.final_s,
                functional: functional.measure_value(&out.config),
            })
        })
        .collect()
}

pub fn write_trajectory_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let io = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in records {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// `(U F - F)(μ, s) / unit`, evaluated without randomness.
///
/// The waiting factor is independent of the spatial move, so with
/// `F(μ, s) = Φ((f, μ)) ψ(s)`:
/// `UF - F = (E Φ' - Φ) E ψ(s') + Φ (E ψ(s') - ψ(s))`.
/// The spatial expectation is a finite sum over particles and the two jump
/// atoms; the waiting-time expectation becomes
/// `unit β ∫_c^∞ (ψ(s + y) - ψ(s)) y^(-1-β) dy` with `c = unit^(1/β)`.
pub fn prelimit_generator_apply(
    functional: &TestFunctional,
    mu: &EmpiricalMeasure,
    s: f64,
    params: &CtrwParams,
    spec: &ModelSpec,
    quad: &Quadrature,
) -> Result<f64> {
    if mu.len() != params.n {
        return Err(Error::param("mu", "particle count differs from params.n"));
    }
    let unit = params.time_unit();
    let h = params.h();
    let n = mu.len() as f64;
    let obs = functional.observable;
    let m = functional.pairing(mu);
    let phi = functional.of_pairing(m);
    let intensity = total_intensity(mu, spec);
    let beta = spec.alpha() * intensity.mean;

    let mut spatial = 0.0;
    for &x in mu.positions() {
        let b = mean_field_drift(x, mu, spec);
        let (p, root) = up_probability(x, b, spec.g(x), h)?;
        let fx = obs.eval(x);
        let mut expect = 0.0;
        for (prob, y) in [(p, root), (1.0 - p, -root)] {
            let d = (obs.eval(x + h * y) - fx) / n;
            // Φ(m + d) - Φ(m), written without cancellation.
            let dphi = match functional.kind {
                crate::model::FunctionalKind::Linear => d,
                crate::model::FunctionalKind::Quadratic => (2.0 * m + d) * d,
            };
            expect += prob * dphi;
        }
        spatial += spec.a(x) / intensity.total * expect;
    }

    let (temporal, e_psi) = match functional.s_factor {
        None => (0.0, 1.0),
        Some(psi) => {
            let c = unit.powf(1.0 / beta);
            let ps = psi.eval(s);
            let breaks: Vec<f64> = psi.breakpoints().iter().map(|b| b - s).filter(|&y| y > 0.0).collect();
            let tail = stable_from(quad, |y| psi.increment(s, y), c, beta, &breaks)?;
            // E ψ(s') - ψ(s) = unit β ∫_c^∞ ...
            let jump = beta * tail.value;
            (jump, ps + unit * jump)
        }
    };
    Ok(spatial / unit * e_psi + phi * temporal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Coefficient, Observable, SFactor};
    use rand::RngCore;

    fn spec(g: f64, c: f64) -> ModelSpec {
        ModelSpec::simple((-10.0, 10.0), g, c, 0.5).unwrap()
    }

    #[test]
    fn symmetric_kernel_without_drift() {
        assert_eq!(up_probability(0.0, 0.0, 4.0, 0.1).unwrap(), (0.5, 2.0));
    }

    #[test]
    fn biased_kernel_moments() {
        let (p, root) = up_probability(0.0, 1.0, 1.0, 0.1).unwrap();
        assert!((p - 0.55).abs() < 1e-15 && root == 1.0);
        let mean = p * root - (1.0 - p) * root;
        assert!((mean / 0.1 - 1.0).abs() < 1e-12);
        let second = p * root * root + (1.0 - p) * root * root;
        assert_eq!(second, 1.0);
    }

    #[test]
    fn kernel_rejects_dominant_drift() {
        let mu = EmpiricalMeasure::new(vec![0.0]).unwrap();
        let err = jump_kernel_sample(0.0, &mu, &spec(1.0, 20.0), 0.1, &mut RngStream::new(0, 0)).unwrap_err();
        assert!(matches!(err, Error::StepSize { position, ratio } if position == 0.0 && ratio > 1.0));
    }

    #[test]
    fn quadratic_generator_identity() {
        // (1/h²) E[(h y)²] = G exactly.
        let (p, root) = up_probability(0.0, 0.7, 2.0, 0.05).unwrap();
        let h = 0.05;
        let e = p * (h * root).powi(2) + (1.0 - p) * (h * root).powi(2);
        assert!((e / (h * h) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn half_order_time_increment_is_tau_squared_r() {
        let params = CtrwParams::new(4, 1.0).unwrap().with_clock(Clock::Coupled);
        let mu = EmpiricalMeasure::new(vec![0.0, 0.1, 0.2, 0.3]).unwrap();
        let st = ChainState::new(mu, 0.0);
        let mut rng = RngStream::new(5, 0);
        let u = RngStream::new(5, 0).unit_upper();
        let (next, _) = chain_step(&st, &params, &spec(1.0, 0.0), &mut rng).unwrap();
        let r = u.powf(-2.0);
        assert!((next.s - 0.25f64.powi(2) * r).abs() < 1e-12 * next.s);
    }

    #[test]
    fn fast_runner_matches_reference() {
        let sp = spec(1.0, 0.3);
        let params = CtrwParams::new(16, 1.0).unwrap();
        let mu = EmpiricalMeasure::gaussian_quantiles(16, 0.0, 1.0).unwrap();
        let mut st = ChainState::new(mu.clone(), 0.0);
        let mut r1 = RngStream::new(9, 2);
        let mut r2 = RngStream::new(9, 2);
        let mut runner = ChainRunner::new(ChainState::new(mu, 0.0), params, &sp).unwrap();
        for _ in 0..500 {
            let (next, a) = chain_step(&st, &params, &sp, &mut r1).unwrap();
            let b = runner.step(&mut r2).unwrap();
            assert_eq!(a.selected_i, b.selected_i);
            assert_eq!(a.x_i_after, b.x_i_after);
            assert!((a.s - b.s).abs() <= 1e-12 * a.s);
            st = next;
        }
    }

    #[test]
    fn weighted_selection_frequencies() {
        // a = 1 + 0.5 x at atoms {0, 1}: selection odds 1 : 1.5.
        let sp = ModelSpec::new(
            (-10.0, 10.0),
            Coefficient::constant(1.0),
            Coefficient::constant(0.0),
            Interaction::None,
            Coefficient::Affine { intercept: 1.0, slope: 0.05 },
            0.5,
        )
        .unwrap();
        let params = CtrwParams::new(2, 1.0).unwrap();
        let mu = EmpiricalMeasure::new(vec![0.0, 10.0]).unwrap();
        let mut count = 0u32;
        let trials = 40_000;
        for id in 0..trials {
            let mut rng = RngStream::new(1, id);
            let mut runner = ChainRunner::new(ChainState::new(mu.clone(), 0.0), params, &sp).unwrap();
            if runner.step(&mut rng).unwrap().selected_i == 1 {
                count += 1;
            }
        }
        let p = count as f64 / trials as f64;
        let se = (0.6 * 0.4 / trials as f64).sqrt();
        assert!((p - 0.6).abs() < 4.0 * se, "{p}");
    }

    #[test]
    fn fenwick_search_finds_prefix() {
        let t = Fenwick::new(&[1.0, 0.0, 2.0, 3.0, 1.0]);
        assert_eq!(t.search(0.5), 0);
        assert_eq!(t.search(1.0), 2);
        assert_eq!(t.search(2.99), 2);
        assert_eq!(t.search(3.0), 3);
        assert_eq!(t.search(6.5), 4);
    }

    #[test]
    fn first_passage_after_one_step() {
        let sp = spec(1.0, 0.0);
        let params = CtrwParams::new(10, 1.0).unwrap().with_clock(Clock::Coupled);
        let mu = EmpiricalMeasure::gaussian_quantiles(10, 0.0, 1.0).unwrap();
        // Tiny t: the first increment already crosses it.
        let mut rng = RngStream::new(3, 0);
        let out = scaled_ctrw_evaluate(&mu, 0.0, 1e-300, &params, &sp, &mut rng, None).unwrap();
        assert_eq!(out.steps, 1);
        assert!((out.inverse_time - 0.1).abs() < 1e-15);
        let moved: usize = out
            .config
            .positions()
            .iter()
            .zip(mu.positions())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(moved, 1);
    }

    #[test]
    fn inverse_time_monotone_in_t() {
        let sp = spec(1.0, 0.0);
        let params = CtrwParams::new(10, 1.0).unwrap();
        let mu = EmpiricalMeasure::gaussian_quantiles(10, 0.0, 1.0).unwrap();
        let mut last = 0.0;
        for t in [0.1, 0.3, 0.5, 1.0, 2.0] {
            let mut rng = RngStream::new(4, 7);
            let out = scaled_ctrw_evaluate(&mu, 0.0, t, &params, &sp, &mut rng, None).unwrap();
            assert!(out.inverse_time >= last);
            last = out.inverse_time;
        }
    }

    #[test]
    fn horizon_error_when_step_cap_hit() {
        let sp = spec(1.0, 0.0);
        let params = CtrwParams::new(10, 1.0).unwrap().with_max_steps(5);
        let mu = EmpiricalMeasure::gaussian_quantiles(10, 0.0, 1.0).unwrap();
        let mut rng = RngStream::new(0, 0);
        let err = scaled_ctrw_evaluate(&mu, 0.0, 1e6, &params, &sp, &mut rng, None).unwrap_err();
        assert!(matches!(err, Error::Horizon(_)));
    }

    #[test]
    fn chain_rejects_degenerate_diffusion() {
        let sp = spec(0.0, 1.0);
        let params = CtrwParams::new(2, 1.0).unwrap();
        let mu = EmpiricalMeasure::new(vec![0.0, 1.0]).unwrap();
        assert!(ChainRunner::new(ChainState::new(mu, 0.0), params, &sp).is_err());
    }

    #[test]
    fn constant_functional_is_harmonic() {
        let sp = spec(1.0, 0.4);
        let params = CtrwParams::new(8, 1.0).unwrap();
        let mu = EmpiricalMeasure::gaussian_quantiles(8, 0.0, 1.0).unwrap();
        let f = TestFunctional::linear(Observable::Constant { value: 3.0 });
        let v = prelimit_generator_apply(&f, &mu, 0.3, &params, &sp, &Quadrature::default()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn prelimit_temporal_part_matches_substitution() {
        // ψ(s) only, ψ supported on [0, 2], s = 0.5, coupled clock, τ = 0.1:
        // value = τ^{-1} ∫_1^∞ (ψ(s + τ^{1/β} r) - ψ(s)) β r^{-1-β} dr.
        let sp = spec(1.0, 0.0);
        let params = CtrwParams::new(10, 1.0).unwrap().with_clock(Clock::Coupled);
        let mu = EmpiricalMeasure::gaussian_quantiles(10, 0.0, 1.0).unwrap();
        let psi = SFactor::Cutoff { end: 2.0 };
        let f = TestFunctional::linear(Observable::Constant { value: 1.0 }).with_s_factor(psi);
        let q = Quadrature::default();
        let v = prelimit_generator_apply(&f, &mu, 0.5, &params, &sp, &q).unwrap();
        let (tau, beta, s) = (0.1, 0.5, 0.5);
        let c = tau * tau;
        // Oracle in the r variable: finite part up to the support edge plus the
        // closed-form tail -ψ(s) ∫_{r_e}^∞ β r^{-1-β} dr = -ψ(s) r_e^{-β}.
        let r_e = (2.0 - s) / c;
        let body = q
            .integrate_with_breaks(
                |r: f64| (psi.eval(s + c * r) - psi.eval(s)) * beta * r.powf(-1.0 - beta),
                &[1.0, 10.0, 100.0, r_e],
            )
            .unwrap()
            .value;
        let oracle = (body - psi.eval(s) * r_e.powf(-beta)) / tau;
        assert!((v - oracle).abs() < 1e-8 * oracle.abs(), "{v} vs {oracle}");
    }

    #[test]
    fn prelimit_spatial_part_is_exact_average() {
        // F = (x², μ), G = 1, b = 0, a = 1: each atom contributes
        // (1/h²) E[(x + h y)² - x²] / N = G / N, so the value is 1 / unit * τ h².
        let sp = spec(1.0, 0.0);
        let params = CtrwParams::new(25, 1.0).unwrap();
        let mu = EmpiricalMeasure::gaussian_quantiles(25, 0.0, 1.0).unwrap();
        let f = TestFunctional::linear(Observable::Square);
        let v = prelimit_generator_apply(&f, &mu, 0.0, &params, &sp, &Quadrature::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let coupled = params.with_clock(Clock::Coupled);
        let v = prelimit_generator_apply(&f, &mu, 0.0, &coupled, &sp, &Quadrature::default()).unwrap();
        // The literal clock slows the spatial part by h² = τ.
        assert!((v - 1.0 / 25.0).abs() < 1e-12);
    }

    #[test]
    fn trajectory_csv_has_documented_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let sp = spec(1.0, 0.0);
        let params = CtrwParams::new(4, 1.0).unwrap();
        let mu = EmpiricalMeasure::gaussian_quantiles(4, 0.0, 1.0).unwrap();
        let mut recs = Vec::new();
        let mut rng = RngStream::new(0, 0);
        scaled_ctrw_evaluate(&mu, 0.0, 0.05, &params, &sp, &mut rng, Some(&mut recs)).unwrap();
        write_trajectory_csv(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("k,s,selected_i,x_i_before,x_i_after\n"));
        assert_eq!(text.lines().count(), recs.len() + 1);
    }

    #[test]
    fn replicas_are_order_independent() {
        let sp = spec(1.0, 0.5);
        let params = CtrwParams::new(6, 1.0).unwrap();
        let mu = EmpiricalMeasure::gaussian_quantiles(6, 0.0, 1.0).unwrap();
        let f = TestFunctional::linear(Observable::Identity);
        let all = evaluate_replicas(&f, &mu, 0.0, 0.5, &params, &sp, 11, 8).unwrap();
        let mut rng = RngStream::new(11, 5);
        let one = scaled_ctrw_evaluate(&mu, 0.0, 0.5, &params, &sp, &mut rng, None).unwrap();
        assert_eq!(all[5].steps, one.steps);
        assert_eq!(all[5].functional, one.config.mean());
        let _ = rng.next_u32();
    }
}
