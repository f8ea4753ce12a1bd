use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Probability measures that can be paired with a test function.
pub trait Measure {
    /// `(f, μ)`.
    fn pair(&self, f: &dyn Fn(f64) -> f64) -> f64;
}

/// Atoms of weight `1/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    positions: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::param("positions", "need at least one atom"));
        }
        if let Some(x) = positions.iter().find(|x| !x.is_finite()) {
            return Err(Error::param("positions", format!("non-finite atom {x}")));
        }
        Ok(Self { positions })
    }

    /// `n` atoms at the midpoint quantiles `(i + ½)/n` of `N(mean, sd²)`.
    pub fn gaussian_quantiles(n: usize, mean: f64, sd: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "need at least one atom"));
        }
        if sd == 0.0 {
            return Self::new(vec![mean; n]);
        }
        let normal = Normal::new(mean, sd).map_err(|e| Error::param("sd", e.to_string()))?;
        Self::new(
            (0..n)
                .map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64))
                .collect(),
        )
    }

    /// `n` atoms at the midpoint quantiles of a grid density.
    pub fn quantiles_of(density: &GridDensity, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "need at least one atom"));
        }
        Self::new(
            (0..n)
                .map(|i| density.quantile((i as f64 + 0.5) / n as f64))
                .collect(),
        )
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<f64> {
        self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mean(&self) -> f64 {
        self.positions.iter().sum::<f64>() / self.len() as f64
    }
}

impl Measure for EmpiricalMeasure {
    fn pair(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        self.positions.iter().map(|&x| f(x)).sum::<f64>() / self.len() as f64
    }
}

/// Cell-averaged density on a uniform grid of `[x_lo, x_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    x_lo: f64,
    x_hi: f64,
    values: Vec<f64>,
}

/// Allowed deviation of `Σ u_i Δx` from one.
pub const MASS_TOLERANCE: f64 = 1e-12;

impl GridDensity {
    pub fn new(x_lo: f64, x_hi: f64, values: Vec<f64>) -> Result<Self> {
        let g = Self::new_unchecked(x_lo, x_hi, values)?;
        if let Some((i, &v)) = g.values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::Positivity { cell: i, value: v });
        }
        let mass = g.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::param("values", format!("total mass {mass} differs from 1")));
        }
        Ok(g)
    }

    /// Checks only the geometry; used by solvers that track mass themselves.
    pub(crate) fn new_unchecked(x_lo: f64, x_hi: f64, values: Vec<f64>) -> Result<Self> {
        if !(x_lo.is_finite() && x_hi.is_finite() && x_lo < x_hi) {
            return Err(Error::param("domain", format!("need x_lo < x_hi, got [{x_lo}, {x_hi}]")));
        }
        if values.is_empty() {
            return Err(Error::param("cells", "need at least one cell"));
        }
        Ok(Self { x_lo, x_hi, values })
    }

    /// Samples `f` at cell centres and rescales to unit mass.
    pub fn from_fn(x_lo: f64, x_hi: f64, cells: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut g = Self::new_unchecked(x_lo, x_hi, vec![0.0; cells])?;
        let centers: Vec<f64> = (0..cells).map(|i| g.center(i)).collect();
        for (v, x) in g.values.iter_mut().zip(centers) {
            *v = f(x);
        }
        let mass = g.mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::param("density", format!("cannot normalize mass {mass}")));
        }
        for v in &mut g.values {
            *v /= mass;
        }
        Self::new(x_lo, x_hi, g.values)
    }

    /// Gaussian `N(mean, sd²)` sampled at cell centres.
    pub fn gaussian(x_lo: f64, x_hi: f64, cells: usize, mean: f64, sd: f64) -> Result<Self> {
        Self::from_fn(x_lo, x_hi, cells, |x| {
            let z = (x - mean) / sd;
            (-0.5 * z * z).exp()
        })
    }

    /// Histogram of the atoms. Atoms outside the domain are counted in the
    /// end cells, so mass is preserved exactly.
    pub fn from_empirical(mu: &EmpiricalMeasure, x_lo: f64, x_hi: f64, cells: usize) -> Result<Self> {
        let mut g = Self::new_unchecked(x_lo, x_hi, vec![0.0; cells])?;
        let mut counts = vec![0u64; cells];
        for &x in mu.positions() {
            counts[g.cell_of(x)] += 1;
        }
        let n = mu.len() as f64;
        let dx = g.dx();
        for (v, c) in g.values.iter_mut().zip(counts) {
            *v = c as f64 / (n * dx);
        }
        Ok(g)
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x_lo, self.x_hi)
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.values.len() as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_lo + (i as f64 + 0.5) * self.dx()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_of(&self, x: f64) -> usize {
        let i = ((x - self.x_lo) / self.dx()).floor();
        if i < 0.0 {
            0
        } else {
            (i as usize).min(self.values.len() - 1)
        }
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx()
    }

    /// Distribution function of the piecewise-constant density.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.x_lo {
            return 0.0;
        }
        if x >= self.x_hi {
            return self.mass();
        }
        let dx = self.dx();
        let i = self.cell_of(x);
        let below: f64 = self.values[..i].iter().sum::<f64>() * dx;
        below + self.values[i] * (x - (self.x_lo + i as f64 * dx))
    }

    /// Generalized inverse of [`cdf`](Self::cdf) for `p` in `(0, 1)`.
    pub fn quantile(&self, p: f64) -> f64 {
        let dx = self.dx();
        let mut acc = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let m = v * dx;
            if acc + m >= p && m > 0.0 {
                return self.x_lo + i as f64 * dx + (p - acc) / v;
            }
            acc += m;
        }
        self.x_hi
    }

    /// Mean of the piecewise-constant density (exact, not midpoint).
    pub fn mean(&self) -> f64 {
        self.pair(&|x| x)
    }

    /// Mass carried by the two boundary cells (leak diagnostic).
    pub fn boundary_mass(&self) -> f64 {
        let n = self.values.len();
        let end = if n > 1 { self.values[n - 1] } else { 0.0 };
        (self.values[0] + end) * self.dx()
    }
}

impl Measure for GridDensity {
    /// Midpoint rule.
    fn pair(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        let dx = self.dx();
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| v * f(self.x_lo + (i as f64 + 0.5) * dx))
            .sum::<f64>()
            * dx
    }
}
