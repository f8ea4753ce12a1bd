//! Problem data: coefficients, interaction, intensity and base order, plus
//! the two measure representations.

mod coef;
mod functional;
mod measure;

pub use coef::{Coefficient, Interaction};
pub use functional::{FunctionalKind, Observable, SFactor, TestFunctional};
pub use measure::{EmpiricalMeasure, GridDensity, Measure};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial dimension. Positions are plain `f64` throughout.
pub const DIMENSION: usize = 1;

/// One-particle model on the interval `[x_lo, x_hi]`.
///
/// The generator of a particle is `a(x) (½ G(x) ∂² + b_μ(x) ∂)` with
/// `b_μ(x) = b0(x) + ∫ k(x, y) μ(dy)`, and the waiting-time tail order at a
/// configuration `μ` is `alpha (a, μ)`.
///
/// `G` and `a` are evaluated at the position clamped into the domain, so
/// their validated bounds hold for particles that drift outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelData", into = "ModelData")]
pub struct ModelSpec {
    x_lo: f64,
    x_hi: f64,
    diffusion: Coefficient,
    drift: Coefficient,
    interaction: Interaction,
    intensity: Coefficient,
    alpha: f64,
    bounds: Bounds,
}

/// Serialized form; deserializing goes through validation.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelData {
    x_lo: f64,
    x_hi: f64,
    diffusion: Coefficient,
    drift: Coefficient,
    #[serde(default)]
    interaction: Interaction,
    intensity: Coefficient,
    alpha: f64,
}

impl TryFrom<ModelData> for ModelSpec {
    type Error = Error;
    fn try_from(d: ModelData) -> Result<Self> {
        ModelSpec::new((d.x_lo, d.x_hi), d.diffusion, d.drift, d.interaction, d.intensity, d.alpha)
    }
}

impl From<ModelSpec> for ModelData {
    fn from(s: ModelSpec) -> Self {
        ModelData {
            x_lo: s.x_lo,
            x_hi: s.x_hi,
            diffusion: s.diffusion,
            drift: s.drift,
            interaction: s.interaction,
            intensity: s.intensity,
            alpha: s.alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Bounds {
    g_min: f64,
    g_max: f64,
    a_min: f64,
    a_max: f64,
}

impl ModelSpec {
    /// Validates and builds a model.
    ///
    /// Zero diffusion is accepted (pure-drift flows); the particle chain
    /// itself needs `G > 0` and reports that separately.
    pub fn new(
        (x_lo, x_hi): (f64, f64),
        diffusion: Coefficient,
        drift: Coefficient,
        interaction: Interaction,
        intensity: Coefficient,
        alpha: f64,
    ) -> Result<Self> {
        if !(x_lo.is_finite() && x_hi.is_finite() && x_lo < x_hi) {
            return Err(Error::param("domain", format!("need x_lo < x_hi, got [{x_lo}, {x_hi}]")));
        }
        crate::error::check_order("alpha", alpha)?;
        let (g_min, g_max) = diffusion.range_on(x_lo, x_hi);
        let (a_min, a_max) = intensity.range_on(x_lo, x_hi);
        if g_min < 0.0 {
            return Err(Error::param("diffusion", format!("G must be nonnegative on the domain, min is {g_min}")));
        }
        if !(a_min > 0.0) {
            return Err(Error::param("intensity", format!("a must be bounded below by a positive constant, min is {a_min}")));
        }
        if !(alpha * a_max < 1.0) {
            return Err(Error::param(
                "intensity",
                format!("alpha * sup a = {} must be below 1", alpha * a_max),
            ));
        }
        Ok(Self {
            x_lo,
            x_hi,
            diffusion,
            drift,
            interaction,
            intensity,
            alpha,
            bounds: Bounds {
                g_min,
                g_max,
                a_min,
                a_max,
            },
        })
    }

    /// Brownian particles with constant drift `c`, unit intensity, no interaction.
    pub fn simple(domain: (f64, f64), g: f64, c: f64, alpha: f64) -> Result<Self> {
        Self::new(
            domain,
            Coefficient::constant(g),
            Coefficient::constant(c),
            Interaction::None,
            Coefficient::constant(1.0),
            alpha,
        )
    }

    pub fn with_intensity(&self, intensity: Coefficient) -> Result<Self> {
        Self::new(
            self.domain(),
            self.diffusion.clone(),
            self.drift.clone(),
            self.interaction.clone(),
            intensity,
            self.alpha,
        )
    }

    pub fn with_diffusion(&self, diffusion: Coefficient) -> Result<Self> {
        Self::new(
            self.domain(),
            diffusion,
            self.drift.clone(),
            self.interaction.clone(),
            self.intensity.clone(),
            self.alpha,
        )
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x_lo, self.x_hi)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn diffusion(&self) -> &Coefficient {
        &self.diffusion
    }

    pub fn drift(&self) -> &Coefficient {
        &self.drift
    }

    pub fn interaction(&self) -> &Interaction {
        &self.interaction
    }

    pub fn intensity(&self) -> &Coefficient {
        &self.intensity
    }

    #[inline]
    fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.x_lo, self.x_hi)
    }

    #[inline]
    pub fn g(&self, x: f64) -> f64 {
        self.diffusion.eval(self.clamp(x))
    }

    #[inline]
    pub fn a(&self, x: f64) -> f64 {
        self.intensity.eval(self.clamp(x))
    }

    #[inline]
    pub fn b0(&self, x: f64) -> f64 {
        self.drift.eval(x)
    }

    #[inline]
    pub fn kernel(&self, x: f64, y: f64) -> f64 {
        self.interaction.kernel(x, y)
    }

    pub fn g_bounds(&self) -> (f64, f64) {
        (self.bounds.g_min, self.bounds.g_max)
    }

    pub fn a_bounds(&self) -> (f64, f64) {
        (self.bounds.a_min, self.bounds.a_max)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_lo && x <= self.x_hi
    }
}

/// `A(x) = Σ a(x_i)` together with `(a, μ) = A(x) / N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalIntensity {
    pub total: f64,
    pub mean: f64,
}

pub fn total_intensity(config: &EmpiricalMeasure, spec: &ModelSpec) -> TotalIntensity {
    let total: f64 = config.positions().iter().map(|&x| spec.a(x)).sum();
    TotalIntensity {
        total,
        mean: total / config.len() as f64,
    }
}

/// `b_μ(x) = b0(x) + ∫ k(x, y) μ(dy)`.
pub fn mean_field_drift(x: f64, mu: &dyn Measure, spec: &ModelSpec) -> f64 {
    let base = spec.b0(x);
    if spec.interaction.is_none() {
        return base;
    }
    base + mu.pair(&|y| spec.kernel(x, y))
}

/// Tail order `alpha (a, μ)` at the measure `μ`.
pub fn order_of(mu: &dyn Measure, spec: &ModelSpec) -> f64 {
    spec.alpha * mu.pair(&|x| spec.a(x))
}
