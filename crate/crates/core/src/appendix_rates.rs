//! Quadrature checks of the jump-approximation rate bound: for a density
//! `p` equal to `y^(-1-α)` above a threshold `B`,
//! `|h^(-α) ∫ f(h y) p(y) dy - ∫ f(y) y^(-1-α) dy| ≤ C_B L h^(1-α)`
//! with `C_B = B^(1-α)/(1-α) + ∫_0^B y p(y) dy` and `|f(y)| ≤ L y` on `[0, B h]`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_order, Error, Result};
use crate::quad::{stable_from, stable_tail, Quadrature};
use crate::stats::linear_fit;

/// Shape of `p` below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubThreshold {
    /// `p = 0` on `[0, B)`. Total mass is `B^(-α)/α`, which is one only
    /// for `B = α^(-1/α)`; the rate bound does not use normalization.
    Zero,
    /// Constant `(1 - B^(-α)/α) / B` on `[0, B)`, completing the mass to one.
    UniformCompletion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCase {
    pub alpha: f64,
    pub threshold: f64,
    pub sub: SubThreshold,
}

/// Mass tolerance for normalized cases.
const MASS_TOL: f64 = 1e-10;

impl RateCase {
    pub fn new(alpha: f64, threshold: f64, sub: SubThreshold) -> Result<Self> {
        check_order("alpha", alpha)?;
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::param("threshold", "B must be positive"));
        }
        let case = Self { alpha, threshold, sub };
        if sub == SubThreshold::UniformCompletion {
            let level = case.sub_density();
            if !(0.0..=1.0).contains(&level) {
                return Err(Error::param(
                    "threshold",
                    format!("uniform completion needs a density in [0, 1] below B, got {level}"),
                ));
            }
            let mass = case.mass(&Quadrature::default())?;
            if (mass - 1.0).abs() > MASS_TOL {
                return Err(Error::param("threshold", format!("density mass {mass} is not 1")));
            }
        }
        Ok(case)
    }

    /// Density value on `[0, B)`.
    pub fn sub_density(&self) -> f64 {
        match self.sub {
            SubThreshold::Zero => 0.0,
            SubThreshold::UniformCompletion => {
                (1.0 - self.threshold.powf(-self.alpha) / self.alpha) / self.threshold
            }
        }
    }

    pub fn density(&self, y: f64) -> f64 {
        if y >= self.threshold {
            y.powf(-1.0 - self.alpha)
        } else if y >= 0.0 {
            self.sub_density()
        } else {
            0.0
        }
    }

    /// `∫ p`, by quadrature.
    pub fn mass(&self, quad: &Quadrature) -> Result<f64> {
        let below = self.sub_density() * self.threshold;
        let above = stable_tail(quad, |_| 1.0, self.threshold, self.alpha, &[])?;
        Ok(below + above.value)
    }

    /// `C_B = B^(1-α)/(1-α) + ∫_0^B y p(y) dy`.
    pub fn constant(&self) -> f64 {
        let b = self.threshold;
        b.powf(1.0 - self.alpha) / (1.0 - self.alpha) + self.sub_density() * b * b / 2.0
    }
}

/// Test functions with their breakpoints and a Lipschitz constant at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum RateFunction {
    Zero,
    /// `y e^(-y)`
    YExp,
    /// `1_[lo, hi](y)`
    Indicator { lo: f64, hi: f64 },
    /// `y 1_[0, 1](y)`
    Ramp,
    /// `e^(-(x + sign y)²) - e^(-x²)`: the shifted form around `x`.
    ShiftedGaussian { x: f64, sign: f64 },
    /// `f(scale · y)` for a base function.
    Scaled { base: ScaledBase, scale: f64 },
}

/// Functions that may be rescaled (no nested scaling).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaledBase {
    YExp,
    Ramp,
}

impl RateFunction {
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            RateFunction::Zero => 0.0,
            RateFunction::YExp => y * (-y).exp(),
            RateFunction::Indicator { lo, hi } => {
                if (lo..=hi).contains(&y) {
                    1.0
                } else {
                    0.0
                }
            }
            RateFunction::Ramp => {
                if (0.0..=1.0).contains(&y) {
                    y
                } else {
                    0.0
                }
            }
            RateFunction::ShiftedGaussian { x, sign } => {
                // e^(-(x + sy)²) - e^(-x²) = e^(-x²) (e^(-sy (2x + sy)) - 1)
                let d = sign * y;
                (-x * x).exp() * (-d * (2.0 * x + d)).exp_m1()
            }
            RateFunction::Scaled { base, scale } => match base {
                ScaledBase::YExp => RateFunction::YExp.eval(scale * y),
                ScaledBase::Ramp => RateFunction::Ramp.eval(scale * y),
            },
        }
    }

    /// Points where `f` or its derivative jumps, or its scale changes.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            RateFunction::Zero => vec![],
            RateFunction::YExp => vec![1.0, 10.0],
            RateFunction::Indicator { lo, hi } => vec![lo, hi],
            RateFunction::Ramp => vec![1.0],
            RateFunction::ShiftedGaussian { x, .. } => vec![x.abs(), x.abs() + 1.0, x.abs() + 5.0],
            RateFunction::Scaled { base, scale } => match base {
                ScaledBase::YExp => vec![1.0 / scale, 10.0 / scale],
                ScaledBase::Ramp => vec![1.0 / scale],
            },
        }
    }

    /// A constant `L` with `|f(y)| ≤ L y` for all `y ≥ 0`, where known.
    pub fn lipschitz(&self) -> Option<f64> {
        match *self {
            RateFunction::Zero => Some(0.0),
            RateFunction::YExp | RateFunction::Ramp => Some(1.0),
            RateFunction::Indicator { lo, .. } if lo > 0.0 => Some(1.0 / lo),
            RateFunction::Indicator { .. } => None,
            RateFunction::ShiftedGaussian { .. } => None,
            RateFunction::Scaled { scale, .. } => Some(scale.abs()),
        }
    }

    /// Whether `f` vanishes on `[0, a)`.
    fn vanishes_below(&self, a: f64) -> bool {
        match *self {
            RateFunction::Zero => true,
            RateFunction::Indicator { lo, .. } => a <= lo,
            _ => false,
        }
    }
}

/// `h^(-α) ∫_0^∞ f(h y) p(y) dy`, split at `B` and at the support edges of `f(h ·)`.
pub fn lhs_scaled_integral(case: &RateCase, f: &RateFunction, h: f64, quad: &Quadrature) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::param("h", "must be positive"));
    }
    let b = case.threshold;
    let breaks: Vec<f64> = f.breakpoints().iter().map(|x| x / h).collect();
    let sub = case.sub_density();
    let below = if sub == 0.0 || f.vanishes_below(h * b) {
        0.0
    } else {
        let mut pts = vec![0.0];
        pts.extend(breaks.iter().copied().filter(|&y| y > 0.0 && y < b));
        pts.push(b);
        pts.sort_by(f64::total_cmp);
        sub * quad.integrate_with_breaks(|y| f.eval(h * y), &pts)?.value
    };
    let above = stable_tail(quad, |y| f.eval(h * y), b, case.alpha, &breaks)?.value;
    Ok(h.powf(-case.alpha) * (below + above))
}

/// `∫_0^∞ f(y) y^(-1-α) dy`. Fails when `f` does not vanish linearly at the origin.
pub fn rhs_stable_integral(f: &RateFunction, alpha: f64, quad: &Quadrature) -> Result<f64> {
    check_order("alpha", alpha)?;
    // Probe the origin: f(y)/y must stay bounded.
    let probe: Vec<f64> = [1e-6, 1e-9, 1e-12].iter().map(|&y| (f.eval(y) / y).abs()).collect();
    if probe[2] > 1e3 * (probe[0] + 1.0) {
        return Err(Error::Integrability(format!(
            "f(y)/y grows like {} near the origin; the kernel integral diverges",
            probe[2]
        )));
    }
    Ok(stable_from(quad, |y| f.eval(y), 0.0, alpha, &f.breakpoints())?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub h: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_err: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub alpha: f64,
    pub threshold: f64,
    pub constant: f64,
    pub lipschitz: f64,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log |lhs - rhs|` against `log h`, over rows
    /// with a nonzero error; `None` if fewer than two such rows.
    pub slope: Option<f64>,
}

impl RateReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    /// First `h` at which the bound fails.
    pub fn first_violation(&self) -> Option<f64> {
        self.rows.iter().find(|r| !r.pass).map(|r| r.h)
    }

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

/// Checks `|lhs - rhs| ≤ C_B L h^(1-α)` at every `h` and fits the decay exponent.
pub fn rate_bound_check(
    case: &RateCase,
    f: &RateFunction,
    lipschitz: f64,
    h_sweep: &[f64],
    quad: &Quadrature,
) -> Result<RateReport> {
    let rhs = rhs_stable_integral(f, case.alpha, quad)?;
    let c_b = case.constant();
    let rows: Vec<RateRow> = h_sweep
        .par_iter()
        .map(|&h| {
            let lhs = lhs_scaled_integral(case, f, h, quad)?;
            let abs_err = (lhs - rhs).abs();
            let bound = c_b * lipschitz * h.powf(1.0 - case.alpha);
            Ok(RateRow {
                h,
                lhs,
                rhs,
                abs_err,
                bound,
                pass: abs_err <= bound,
            })
        })
        .collect::<Result<_>>()?;
    let (lx, ly): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.abs_err > 0.0)
        .map(|r| (r.h.ln(), r.abs_err.ln()))
        .unzip();
    let slope = if lx.len() >= 2 { Some(linear_fit(&lx, &ly)?.0) } else { None };
    Ok(RateReport {
        alpha: case.alpha,
        threshold: case.threshold,
        constant: c_b,
        lipschitz,
        rows,
        slope,
    })
}

/// The shifted form: with `τ = h^α`, compares
/// `τ^(-1) ∫ (f(x ± τ^(1/α) y) - f(x)) p(y) dy` against
/// `∫ (f(x ± y) - f(x)) y^(-1-α) dy` for `f = e^(-x²)`. Rows are keyed by `h = τ^(1/α)`.
pub fn shifted_form_check(
    case: &RateCase,
    x: f64,
    sign: f64,
    lipschitz: f64,
    tau_sweep: &[f64],
    quad: &Quadrature,
) -> Result<RateReport> {
    let f = RateFunction::ShiftedGaussian { x, sign };
    let hs: Vec<f64> = tau_sweep.iter().map(|t| t.powf(1.0 / case.alpha)).collect();
    rate_bound_check(case, &f, lipschitz, &hs, quad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_pareto_constant() {
        let c = RateCase::new(0.5, 1.0, SubThreshold::Zero).unwrap();
        assert!((c.constant() - 2.0).abs() < 1e-15);
        assert!((c.mass(&Quadrature::default()).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_completion_is_normalized() {
        let c = RateCase::new(0.5, 9.0, SubThreshold::UniformCompletion).unwrap();
        assert!((c.mass(&Quadrature::default()).unwrap() - 1.0).abs() < 1e-10);
        assert!((c.sub_density() - (1.0 - 2.0 / 3.0) / 9.0).abs() < 1e-15);
        // B = 1, α = ½ would need a negative density below B.
        assert!(RateCase::new(0.5, 1.0, SubThreshold::UniformCompletion).is_err());
    }

    #[test]
    fn zero_function() {
        let c = RateCase::new(0.5, 1.0, SubThreshold::Zero).unwrap();
        let q = Quadrature::default();
        assert_eq!(lhs_scaled_integral(&c, &RateFunction::Zero, 0.1, &q).unwrap(), 0.0);
        assert_eq!(rhs_stable_integral(&RateFunction::Zero, 0.5, &q).unwrap(), 0.0);
    }

    #[test]
    fn divergent_kernel_integral_is_rejected() {
        let err = rhs_stable_integral(&RateFunction::Indicator { lo: 0.0, hi: 1.0 }, 0.5, &Quadrature::default());
        assert!(matches!(err, Err(Error::Integrability(_))));
    }

    #[test]
    fn csv_columns() {
        let c = RateCase::new(0.5, 1.0, SubThreshold::Zero).unwrap();
        let r = rate_bound_check(&c, &RateFunction::YExp, 1.0, &[0.1], &Quadrature::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rates.csv");
        r.write_csv(&p).unwrap();
        assert!(std::fs::read_to_string(p).unwrap().starts_with("h,lhs,rhs,abs_err,bound,pass\n"));
    }
}
