use serde::{Deserialize, Serialize};

use super::measure::Measure;
use crate::error::{Error, Result};

/// Smooth observable `f` with closed-form first and second derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Observable {
    Constant { value: f64 },
    Identity,
    Square,
    /// `exp(-(x - center)² / (2 width²))`
    Gaussian { center: f64, width: f64 },
    /// `sin(frequency x)`
    Sine { frequency: f64 },
}

impl Observable {
    pub fn from_name(name: &str, params: &[f64]) -> Result<Self> {
        let o = match (name, params) {
            ("constant", &[v]) => Observable::Constant { value: v },
            ("identity", &[]) => Observable::Identity,
            ("square", &[]) => Observable::Square,
            ("gaussian", &[c, w]) if w > 0.0 => Observable::Gaussian { center: c, width: w },
            ("sine", &[k]) => Observable::Sine { frequency: k },
            _ => {
                return Err(Error::config(
                    "observable",
                    format!("unknown observable {name} with {} parameters", params.len()),
                ))
            }
        };
        Ok(o)
    }

    /// `(f(x), f'(x), f''(x))`.
    #[inline]
    pub fn jet(&self, x: f64) -> [f64; 3] {
        match *self {
            Observable::Constant { value } => [value, 0.0, 0.0],
            Observable::Identity => [x, 1.0, 0.0],
            Observable::Square => [x * x, 2.0 * x, 2.0],
            Observable::Gaussian { center, width } => {
                let z = (x - center) / width;
                let e = (-0.5 * z * z).exp();
                [e, -z / width * e, (z * z - 1.0) / (width * width) * e]
            }
            Observable::Sine { frequency: k } => {
                let (s, c) = (k * x).sin_cos();
                [s, k * c, -k * k * s]
            }
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.jet(x)[0]
    }
}

/// Time factor `ψ(s)` multiplying a functional of the measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum SFactor {
    /// `exp(-rate s)`
    Exp { rate: f64 },
    /// `exp(-(s - center)² / (2 width²))`
    Gaussian { center: f64, width: f64 },
    /// `(1 - s/end)²` for `s < end`, zero afterwards; C¹ with compact support to the right.
    Cutoff { end: f64 },
}

impl SFactor {
    /// `(ψ(s), ψ'(s))`.
    #[inline]
    pub fn jet(&self, s: f64) -> [f64; 2] {
        match *self {
            SFactor::Exp { rate } => {
                let e = (-rate * s).exp();
                [e, -rate * e]
            }
            SFactor::Gaussian { center, width } => {
                let z = (s - center) / width;
                let e = (-0.5 * z * z).exp();
                [e, -z / width * e]
            }
            SFactor::Cutoff { end } => {
                if s >= end {
                    [0.0, 0.0]
                } else {
                    let w = 1.0 - s / end;
                    [w * w, -2.0 * w / end]
                }
            }
        }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        self.jet(s)[0]
    }

    /// `ψ(s + y) - ψ(s)`, written without cancellation for small `y`.
    pub fn increment(&self, s: f64, y: f64) -> f64 {
        match *self {
            SFactor::Exp { rate } => (-rate * s).exp() * (-rate * y).exp_m1(),
            SFactor::Gaussian { center, width } => {
                let z = (s - center) / width;
                let d = y / width;
                (-0.5 * z * z).exp() * (-0.5 * d * (2.0 * z + d)).exp_m1()
            }
            SFactor::Cutoff { end } => {
                if s + y >= end {
                    -self.eval(s)
                } else {
                    let d = y / end;
                    -d * (2.0 * (1.0 - s / end) - d)
                }
            }
        }
    }

    /// Point beyond which `ψ` vanishes identically, if any.
    pub fn support_end(&self) -> Option<f64> {
        match *self {
            SFactor::Cutoff { end } => Some(end),
            _ => None,
        }
    }

    /// Points where `ψ` changes character; used as quadrature breakpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            SFactor::Exp { rate } if rate > 0.0 => vec![1.0 / rate],
            SFactor::Exp { .. } => vec![],
            SFactor::Gaussian { center, width } => {
                vec![center - 3.0 * width, center, center + 3.0 * width]
            }
            SFactor::Cutoff { end } => vec![end],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionalKind {
    /// `F(μ) = (f, μ)`
    Linear,
    /// `F(μ) = (f, μ)²`
    Quadratic,
}

/// `F(μ, s) = Φ((f, μ)) ψ(s)` with `Φ` the identity or the square, and
/// `ψ ≡ 1` when no time factor is attached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunctional {
    pub kind: FunctionalKind,
    pub observable: Observable,
    #[serde(default)]
    pub s_factor: Option<SFactor>,
}

impl TestFunctional {
    pub fn linear(observable: Observable) -> Self {
        Self {
            kind: FunctionalKind::Linear,
            observable,
            s_factor: None,
        }
    }

    pub fn quadratic(observable: Observable) -> Self {
        Self {
            kind: FunctionalKind::Quadratic,
            observable,
            s_factor: None,
        }
    }

    pub fn with_s_factor(mut self, psi: SFactor) -> Self {
        self.s_factor = Some(psi);
        self
    }

    /// `F` as a function of the pairing `m = (f, μ)`.
    #[inline]
    pub fn of_pairing(&self, m: f64) -> f64 {
        match self.kind {
            FunctionalKind::Linear => m,
            FunctionalKind::Quadratic => m * m,
        }
    }

    pub fn pairing(&self, mu: &dyn Measure) -> f64 {
        let f = self.observable;
        mu.pair(&|x| f.eval(x))
    }

    /// `F(μ)` without the time factor.
    pub fn measure_value(&self, mu: &dyn Measure) -> f64 {
        self.of_pairing(self.pairing(mu))
    }

    #[inline]
    pub fn psi(&self, s: f64) -> f64 {
        self.s_factor.map_or(1.0, |p| p.eval(s))
    }

    /// `F(μ, s)`.
    pub fn value(&self, mu: &dyn Measure, s: f64) -> f64 {
        self.measure_value(mu) * self.psi(s)
    }

    /// Factor `c(m)` with `δF/δμ(x) = c(m) f(x)`.
    #[inline]
    pub fn variational_scale(&self, m: f64) -> f64 {
        match self.kind {
            FunctionalKind::Linear => 1.0,
            FunctionalKind::Quadratic => 2.0 * m,
        }
    }

    /// `δF/δμ` and its first two spatial derivatives at `x`, given `m = (f, μ)`.
    #[inline]
    pub fn variational(&self, m: f64, x: f64) -> [f64; 3] {
        let c = self.variational_scale(m);
        let [f0, f1, f2] = self.observable.jet(x);
        [c * f0, c * f1, c * f2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EmpiricalMeasure;

    #[test]
    fn observable_derivatives_match_differences() {
        let obs = [
            Observable::Identity,
            Observable::Square,
            Observable::Gaussian { center: 0.3, width: 0.7 },
            Observable::Sine { frequency: 1.7 },
        ];
        let h = 1e-4;
        for o in obs {
            for x in [-1.2, 0.0, 0.9] {
                let [_, d1, d2] = o.jet(x);
                let fd1 = (o.eval(x + h) - o.eval(x - h)) / (2.0 * h);
                let fd2 = (o.eval(x + h) - 2.0 * o.eval(x) + o.eval(x - h)) / (h * h);
                assert!((d1 - fd1).abs() < 1e-7, "{o:?}");
                assert!((d2 - fd2).abs() < 1e-5, "{o:?}");
            }
        }
    }

    #[test]
    fn s_factor_derivatives_match_differences() {
        let h = 1e-6;
        for p in [
            SFactor::Exp { rate: 1.3 },
            SFactor::Gaussian { center: 1.0, width: 0.4 },
            SFactor::Cutoff { end: 2.0 },
        ] {
            for s in [0.1, 0.8, 1.9, 2.5] {
                let fd = (p.eval(s + h) - p.eval(s - h)) / (2.0 * h);
                assert!((p.jet(s)[1] - fd).abs() < 1e-6, "{p:?} at {s}");
            }
        }
    }

    #[test]
    fn quadratic_variational_derivative() {
        // δ/δμ (f, μ)² = 2 (f, μ) f, checked by perturbing one atom's weight.
        let f = TestFunctional::quadratic(Observable::Sine { frequency: 1.0 });
        let mu = EmpiricalMeasure::new(vec![0.1, 0.5, 1.4]).unwrap();
        let m = f.pairing(&mu);
        let z = 0.8;
        let eps = 1e-6;
        let bumped = m + eps * (f.observable.eval(z) - m);
        let fd = (f.of_pairing(bumped) - f.of_pairing(m)) / eps;
        let expect = f.variational(m, z)[0] - f.variational_scale(m) * m;
        assert!((fd - expect).abs() < 1e-5);
    }

    #[test]
    fn mass_functionals() {
        let mu = EmpiricalMeasure::new(vec![3.0, -1.0]).unwrap();
        let one = Observable::Constant { value: 1.0 };
        assert_eq!(TestFunctional::linear(one).measure_value(&mu), 1.0);
        assert_eq!(TestFunctional::quadratic(one).measure_value(&mu), 1.0);
    }

    #[test]
    fn time_factor_increments() {
        let factors = [
            SFactor::Exp { rate: 0.7 },
            SFactor::Gaussian { center: 0.4, width: 0.3 },
            SFactor::Cutoff { end: 1.5 },
        ];
        for psi in factors {
            for (s, y) in [(0.2, 0.5), (0.0, 2.0), (1.0, 0.3)] {
                let naive = psi.eval(s + y) - psi.eval(s);
                assert!((psi.increment(s, y) - naive).abs() < 1e-15, "{psi:?}");
            }
            // Small steps follow the derivative.
            let y = 1e-12;
            assert!((psi.increment(0.2, y) / y - psi.jet(0.2)[1]).abs() < 1e-9, "{psi:?}");
        }
    }
}
