//! The deterministic limiting flow `M_μ(t)`: a finite-volume solver for the
//! density and an interacting-particle (McKean–Vlasov) solver.
//!
//! Both advance `∂_t u = ½ ∂²(D u) - ∂(V u)` with `D = G a/(a,u)` and
//! `V = b_u a/(a,u)`, the strong form of the kinetic equation.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    mean_field_drift, order_of, EmpiricalMeasure, GridDensity, Interaction, Measure, ModelSpec,
    TestFunctional,
};
use crate::random::RngStream;

/// Target number of stored snapshots when `record_every` is left automatic.
const AUTO_SNAPSHOTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub enum FlowMeasure {
    Grid(GridDensity),
    Particles(EmpiricalMeasure),
}

impl FlowMeasure {
    pub fn as_measure(&self) -> &dyn Measure {
        match self {
            FlowMeasure::Grid(g) => g,
            FlowMeasure::Particles(p) => p,
        }
    }

    pub fn mean(&self) -> f64 {
        self.as_measure().pair(&|x| x)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowDiagnostics {
    pub steps: u64,
    /// Largest `|Δ mass|` over a single grid step.
    pub max_mass_drift: f64,
    /// Largest mass seen in the two boundary cells (grid) or outside the
    /// domain (particles).
    pub max_boundary_mass: f64,
}

#[derive(Debug, Clone)]
enum Continuation {
    Grid {
        stepper: GridStepper,
        current: Vec<f64>,
    },
    Particles {
        streams: Vec<RngStream>,
        current: Vec<f64>,
    },
}

/// Snapshots of the flow with the order `β(u) = alpha (a, μ_u)` at each.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    times: Vec<f64>,
    measures: Vec<FlowMeasure>,
    betas: Vec<f64>,
    dt: f64,
    record_every: usize,
    steps: u64,
    spec: ModelSpec,
    state: Continuation,
    pub diagnostics: FlowDiagnostics,
}

impl FlowSolution {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn measures(&self) -> &[FlowMeasure] {
        &self.measures
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("flow has an initial snapshot")
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Index `j` and weight `w` with `u = (1-w) t_j + w t_{j+1}`.
    fn locate(&self, u: f64) -> Result<(usize, f64)> {
        let t_end = self.horizon();
        if !(u >= 0.0 && u <= t_end) {
            return Err(Error::Range {
                what: "flow time",
                value: u,
                lo: 0.0,
                hi: t_end,
            });
        }
        let j = self.times.partition_point(|&t| t <= u).saturating_sub(1);
        if j + 1 >= self.times.len() {
            return Ok((self.times.len() - 1, 0.0));
        }
        let (a, b) = (self.times[j], self.times[j + 1]);
        Ok((j, (u - a) / (b - a)))
    }

    fn interpolate(&self, nodes: &[f64], u: f64) -> Result<f64> {
        let (j, w) = self.locate(u)?;
        Ok(if w == 0.0 {
            nodes[j]
        } else {
            (1.0 - w) * nodes[j] + w * nodes[j + 1]
        })
    }

    pub fn beta_at(&self, u: f64) -> Result<f64> {
        self.interpolate(&self.betas, u)
    }

    /// `F(M(t_j))` at every snapshot.
    pub fn functional_nodes(&self, functional: &TestFunctional) -> Vec<f64> {
        self.measures
            .iter()
            .map(|m| functional.measure_value(m.as_measure()))
            .collect()
    }

    /// Continues the integration until the horizon reaches `t_end`.
    pub fn extend_to(&mut self, t_end: f64) -> Result<()> {
        let target_steps = steps_for(t_end, self.dt);
        while self.steps < target_steps {
            self.advance_one()?;
            if self.steps % self.record_every as u64 == 0 || self.steps == target_steps {
                self.record();
            }
        }
        Ok(())
    }

    fn advance_one(&mut self) -> Result<()> {
        match &mut self.state {
            Continuation::Grid { stepper, current } => {
                let drift = stepper.step(current, self.dt, &self.spec)?;
                let d = &mut self.diagnostics;
                d.max_mass_drift = d.max_mass_drift.max(drift);
            }
            Continuation::Particles { streams, current } => {
                particle_step(current, streams, self.dt, &self.spec);
            }
        }
        self.steps += 1;
        self.diagnostics.steps = self.steps;
        Ok(())
    }

    fn record(&mut self) {
        let t = self.steps as f64 * self.dt;
        let m = match &self.state {
            Continuation::Grid { stepper, current } => {
                let g = GridDensity::new_unchecked(stepper.x_lo, stepper.x_hi, current.clone())
                    .expect("grid geometry validated at start");
                self.diagnostics.max_boundary_mass = self.diagnostics.max_boundary_mass.max(g.boundary_mass());
                FlowMeasure::Grid(g)
            }
            Continuation::Particles { current, .. } => {
                let outside = current.iter().filter(|&&x| !self.spec.contains(x)).count();
                self.diagnostics.max_boundary_mass =
                    self.diagnostics.max_boundary_mass.max(outside as f64 / current.len() as f64);
                FlowMeasure::Particles(EmpiricalMeasure::new(current.clone()).expect("non-empty ensemble"))
            }
        };
        self.betas.push(order_of(m.as_measure(), &self.spec));
        self.times.push(t);
        self.measures.push(m);
    }

    fn start(spec: &ModelSpec, dt: f64, record_every: usize, state: Continuation) -> Self {
        let mut s = Self {
            times: Vec::new(),
            measures: Vec::new(),
            betas: Vec::new(),
            dt,
            record_every: record_every.max(1),
            steps: 0,
            spec: spec.clone(),
            state,
            diagnostics: FlowDiagnostics::default(),
        };
        s.record();
        s
    }

    /// CSV with header `u,beta_u,v0,...` (grid cell values) or
    /// `u,beta_u,p0,...` (particle positions), one row per snapshot.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let (prefix, width) = match &self.measures[0] {
            FlowMeasure::Grid(g) => ("v", g.cells()),
            FlowMeasure::Particles(p) => ("p", p.len()),
        };
        let mut header = vec!["u".to_string(), "beta_u".to_string()];
        header.extend((0..width).map(|i| format!("{prefix}{i}")));
        w.write_record(&header).map_err(io)?;
        for ((t, b), m) in self.times.iter().zip(&self.betas).zip(&self.measures) {
            let vals = match m {
                FlowMeasure::Grid(g) => g.values(),
                FlowMeasure::Particles(p) => p.positions(),
            };
            let row = [*t, *b].into_iter().chain(vals.iter().copied()).map(|v| v.to_string());
            w.write_record(row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn steps_for(t_end: f64, dt: f64) -> u64 {
    (t_end / dt - 1e-9).ceil().max(0.0) as u64
}

fn auto_record_every(t_end: f64, dt: f64) -> usize {
    ((steps_for(t_end, dt) as usize) / AUTO_SNAPSHOTS).max(1)
}

/// `B(z) = z / (e^z - 1)`.
#[inline]
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Static geometry and coefficients for the finite-volume scheme.
#[derive(Debug, Clone)]
struct GridStepper {
    x_lo: f64,
    x_hi: f64,
    dx: f64,
    centers: Vec<f64>,
    g_cell: Vec<f64>,
    a_cell: Vec<f64>,
    b0_face: Vec<f64>,
    g_face: Vec<f64>,
    // scratch
    q: Vec<f64>,
    flux: Vec<f64>,
    inter: Vec<f64>,
}

impl GridStepper {
    fn new(mu0: &GridDensity, spec: &ModelSpec) -> Self {
        let (x_lo, x_hi) = mu0.domain();
        let m = mu0.cells();
        let dx = mu0.dx();
        let centers: Vec<f64> = (0..m).map(|i| mu0.center(i)).collect();
        let faces: Vec<f64> = (1..m).map(|i| x_lo + i as f64 * dx).collect();
        Self {
            x_lo,
            x_hi,
            dx,
            g_cell: centers.iter().map(|&x| spec.g(x)).collect(),
            a_cell: centers.iter().map(|&x| spec.a(x)).collect(),
            b0_face: faces.iter().map(|&x| spec.b0(x)).collect(),
            g_face: faces.iter().map(|&x| spec.g(x)).collect(),
            centers,
            q: vec![0.0; m],
            flux: vec![0.0; m + 1],
            inter: vec![0.0; m],
        }
    }

    /// Interaction part of the drift at cell centres, midpoint rule.
    fn interaction(&mut self, u: &[f64], spec: &ModelSpec) {
        let dx = self.dx;
        match *spec.interaction() {
            Interaction::None => self.inter.iter_mut().for_each(|v| *v = 0.0),
            Interaction::MeanAttraction { strength } => {
                let mass: f64 = u.iter().sum::<f64>() * dx;
                let first: f64 = u.iter().zip(&self.centers).map(|(v, x)| v * x).sum::<f64>() * dx;
                for (v, &x) in self.inter.iter_mut().zip(&self.centers) {
                    *v = strength * (first - mass * x);
                }
            }
            Interaction::GaussianKernel { .. } => {
                for i in 0..u.len() {
                    let x = self.centers[i];
                    self.inter[i] = u
                        .iter()
                        .zip(&self.centers)
                        .map(|(v, &y)| v * spec.kernel(x, y))
                        .sum::<f64>()
                        * dx;
                }
            }
        }
    }

    /// One explicit step; returns the mass change.
    fn step(&mut self, u: &mut [f64], dt: f64, spec: &ModelSpec) -> Result<f64> {
        let m = u.len();
        let dx = self.dx;
        let mass_before: f64 = u.iter().sum::<f64>() * dx;
        let total_a: f64 = u.iter().zip(&self.a_cell).map(|(v, a)| v * a).sum::<f64>() * dx;
        self.interaction(u, spec);
        for i in 0..m {
            self.q[i] = self.g_cell[i] * self.a_cell[i] * u[i] / total_a;
        }
        // Outflow rate per cell, for the positivity bound.
        let mut rate = vec![0.0; m];
        self.flux[0] = 0.0;
        self.flux[m] = 0.0;
        for f in 0..m.saturating_sub(1) {
            let (l, r) = (f, f + 1);
            let b = self.b0_face[f] + 0.5 * (self.inter[l] + self.inter[r]);
            let g = self.g_face[f];
            if g > 1e-14 * b.abs().max(1.0) * dx {
                // Scharfetter–Gummel: exact for locally constant b/G.
                let p = 2.0 * b * dx / g;
                let (bm, bp) = (bernoulli(-p), bernoulli(p));
                self.flux[r] = (bm * self.q[l] - bp * self.q[r]) / (2.0 * dx);
                rate[l] += self.g_cell[l] * self.a_cell[l] / total_a * bm / (2.0 * dx * dx);
                rate[r] += self.g_cell[r] * self.a_cell[r] / total_a * bp / (2.0 * dx * dx);
            } else {
                // Upwind transport where diffusion vanishes.
                let (vl, vr) = (self.a_cell[l] / total_a, self.a_cell[r] / total_a);
                self.flux[r] = b.max(0.0) * vl * u[l] + b.min(0.0) * vr * u[r];
                rate[l] += b.max(0.0) * vl / dx;
                rate[r] += (-b).max(0.0) * vr / dx;
            }
        }
        let max_rate = rate.iter().copied().fold(0.0, f64::max);
        if max_rate > 0.0 && dt * max_rate > 1.0 + 1e-12 {
            return Err(Error::Stability {
                dt,
                bound: 1.0 / max_rate,
            });
        }
        let lambda = dt / dx;
        for i in 0..m {
            u[i] -= lambda * (self.flux[i + 1] - self.flux[i]);
        }
        if let Some((cell, &value)) = u.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::Positivity { cell, value });
        }
        let mass_after: f64 = u.iter().sum::<f64>() * dx;
        Ok((mass_after - mass_before).abs())
    }
}

/// Finite-volume solution with Scharfetter–Gummel fluxes and zero-flux
/// boundaries. `dt` is checked against the positivity bound every step.
pub fn solve_flow_grid(mu0: &GridDensity, t_end: f64, dt: f64, spec: &ModelSpec) -> Result<FlowSolution> {
    solve_flow_grid_recording(mu0, t_end, dt, auto_record_every(t_end, dt), spec)
}

/// As [`solve_flow_grid`], storing a snapshot every `record_every` steps.
pub fn solve_flow_grid_recording(
    mu0: &GridDensity,
    t_end: f64,
    dt: f64,
    record_every: usize,
    spec: &ModelSpec,
) -> Result<FlowSolution> {
    check_times(t_end, dt)?;
    if mu0.domain() != spec.domain() {
        return Err(Error::param("mu0", "grid domain must match the model domain"));
    }
    let state = Continuation::Grid {
        stepper: GridStepper::new(mu0, spec),
        current: mu0.values().to_vec(),
    };
    let mut flow = FlowSolution::start(spec, dt, record_every, state);
    flow.extend_to(t_end)?;
    Ok(flow)
}

fn check_times(t_end: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", "time step must be positive"));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::param("t_end", "horizon must be nonnegative"));
    }
    Ok(())
}

fn particle_step(xs: &mut [f64], streams: &mut [RngStream], dt: f64, spec: &ModelSpec) {
    let snapshot = EmpiricalMeasure::new(xs.to_vec()).expect("non-empty ensemble");
    let total_a = snapshot.pair(&|x| spec.a(x));
    let mean = snapshot.mean();
    let drift = |x: f64| match *spec.interaction() {
        Interaction::None => spec.b0(x),
        Interaction::MeanAttraction { strength } => spec.b0(x) + strength * (mean - x),
        Interaction::GaussianKernel { .. } => mean_field_drift(x, &snapshot, spec),
    };
    xs.par_iter_mut().zip(streams.par_iter_mut()).for_each(|(x, rng)| {
        let w = spec.a(*x) / total_a;
        let g = spec.g(*x);
        let mut next = *x + w * drift(*x) * dt;
        if g > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            next += (w * g * dt).sqrt() * z;
        }
        *x = next;
    });
}

/// Euler–Maruyama for the McKean–Vlasov particle system. Particle `j`
/// starts at atom `j * len(μ0) / n_particles` of `μ0` and draws its noise
/// from stream `(seed, j)`.
pub fn solve_flow_ensemble(
    mu0: &EmpiricalMeasure,
    t_end: f64,
    dt: f64,
    spec: &ModelSpec,
    n_particles: usize,
    seed: u64,
) -> Result<FlowSolution> {
    check_times(t_end, dt)?;
    if n_particles == 0 {
        return Err(Error::param("n_particles", "need at least one particle"));
    }
    let src = mu0.positions();
    let current: Vec<f64> = (0..n_particles).map(|j| src[j * src.len() / n_particles]).collect();
    let streams = (0..n_particles as u64).map(|j| RngStream::new(seed, j)).collect();
    let state = Continuation::Particles { streams, current };
    let mut flow = FlowSolution::start(spec, dt, auto_record_every(t_end, dt), state);
    flow.extend_to(t_end)?;
    Ok(flow)
}

/// `F(M(u))`, linearly interpolated between snapshots.
pub fn flow_functional(functional: &TestFunctional, flow: &FlowSolution, u: f64) -> Result<f64> {
    let (j, w) = flow.locate(u)?;
    let at = |k: usize| functional.measure_value(flow.measures[k].as_measure());
    Ok(if w == 0.0 { at(j) } else { (1.0 - w) * at(j) + w * at(j + 1) })
}

/// Largest stable step for the grid solver at the initial density.
pub fn grid_stability_bound(mu0: &GridDensity, spec: &ModelSpec) -> f64 {
    let mut stepper = GridStepper::new(mu0, spec);
    let mut probe = mu0.values().to_vec();
    match stepper.step(&mut probe, f64::INFINITY, spec) {
        Err(Error::Stability { bound, .. }) => bound,
        _ => f64::INFINITY,
    }
}
