use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar coefficient families selectable by name from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Coefficient {
    Constant { value: f64 },
    /// `intercept + slope * x`
    Affine { intercept: f64, slope: f64 },
    /// `mean + amplitude * sin(frequency * x)`
    Sine {
        mean: f64,
        amplitude: f64,
        frequency: f64,
    },
    /// `base + amplitude * exp(-(x - center)^2 / (2 width^2))`
    Gaussian {
        base: f64,
        amplitude: f64,
        center: f64,
        width: f64,
    },
}

impl Coefficient {
    pub fn constant(value: f64) -> Self {
        Coefficient::Constant { value }
    }

    pub fn from_family(name: &str, params: &[f64]) -> Result<Self> {
        let need = |n: usize| -> Result<()> {
            if params.len() == n {
                Ok(())
            } else {
                Err(Error::config(
                    name,
                    format!("expects {n} parameters, got {}", params.len()),
                ))
            }
        };
        let c = match name {
            "constant" => {
                need(1)?;
                Coefficient::Constant { value: params[0] }
            }
            "affine" => {
                need(2)?;
                Coefficient::Affine {
                    intercept: params[0],
                    slope: params[1],
                }
            }
            "sine" => {
                need(3)?;
                Coefficient::Sine {
                    mean: params[0],
                    amplitude: params[1],
                    frequency: params[2],
                }
            }
            "gaussian" => {
                need(4)?;
                Coefficient::Gaussian {
                    base: params[0],
                    amplitude: params[1],
                    center: params[2],
                    width: params[3],
                }
            }
            other => {
                return Err(Error::config(
                    other,
                    "unknown coefficient family (constant, affine, sine, gaussian)",
                ))
            }
        };
        if c.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::config(name, "parameters must be finite"));
        }
        if let Coefficient::Gaussian { width, .. } = c {
            if width <= 0.0 {
                return Err(Error::config(name, "width must be positive"));
            }
        }
        Ok(c)
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            Coefficient::Constant { value } => vec![value],
            Coefficient::Affine { intercept, slope } => vec![intercept, slope],
            Coefficient::Sine {
                mean,
                amplitude,
                frequency,
            } => vec![mean, amplitude, frequency],
            Coefficient::Gaussian {
                base,
                amplitude,
                center,
                width,
            } => vec![base, amplitude, center, width],
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Coefficient::Constant { value } => value,
            Coefficient::Affine { intercept, slope } => intercept + slope * x,
            Coefficient::Sine {
                mean,
                amplitude,
                frequency,
            } => mean + amplitude * (frequency * x).sin(),
            Coefficient::Gaussian {
                base,
                amplitude,
                center,
                width,
            } => {
                let z = (x - center) / width;
                base + amplitude * (-0.5 * z * z).exp()
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match *self {
            Coefficient::Constant { .. } => true,
            Coefficient::Affine { slope, .. } => slope == 0.0,
            Coefficient::Sine { amplitude, .. } | Coefficient::Gaussian { amplitude, .. } => {
                amplitude == 0.0
            }
        }
    }

    /// Exact infimum and supremum over `[lo, hi]`.
    pub fn range_on(&self, lo: f64, hi: f64) -> (f64, f64) {
        match *self {
            Coefficient::Constant { value } => (value, value),
            Coefficient::Affine { .. } => {
                let (p, q) = (self.eval(lo), self.eval(hi));
                (p.min(q), p.max(q))
            }
            Coefficient::Sine {
                mean,
                amplitude,
                frequency,
            } => {
                let (mut mn, mut mx) = {
                    let (p, q) = (self.eval(lo), self.eval(hi));
                    (p.min(q), p.max(q))
                };
                if frequency != 0.0 {
                    // Interior extrema sit where frequency * x = pi/2 + k pi.
                    let (a, b) = {
                        let (p, q) = (frequency * lo, frequency * hi);
                        (p.min(q), p.max(q))
                    };
                    let pi = std::f64::consts::PI;
                    let mut k = ((a - pi / 2.0) / pi).ceil();
                    while pi / 2.0 + k * pi <= b {
                        let v = mean + amplitude * (pi / 2.0 + k * pi).sin();
                        mn = mn.min(v);
                        mx = mx.max(v);
                        k += 1.0;
                    }
                }
                (mn, mx)
            }
            Coefficient::Gaussian { center, .. } => {
                let mut vals = vec![self.eval(lo), self.eval(hi)];
                if center > lo && center < hi {
                    vals.push(self.eval(center));
                }
                let mn = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let mx = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (mn, mx)
            }
        }
    }
}

/// Pairwise interaction kernels `k(x, y)` entering the mean-field drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Interaction {
    #[default]
    None,
    /// `strength * (y - x)`: attraction to the mean.
    MeanAttraction { strength: f64 },
    /// `strength * (y - x) * exp(-(y - x)^2 / (2 width^2))`: short-range attraction.
    GaussianKernel { strength: f64, width: f64 },
}

impl Interaction {
    pub fn from_family(name: &str, params: &[f64]) -> Result<Self> {
        let k = match (name, params.len()) {
            ("none", 0) => Interaction::None,
            ("mean-attraction", 1) => Interaction::MeanAttraction {
                strength: params[0],
            },
            ("gaussian-kernel", 2) if params[1] > 0.0 => Interaction::GaussianKernel {
                strength: params[0],
                width: params[1],
            },
            ("none" | "mean-attraction" | "gaussian-kernel", _) => {
                return Err(Error::config(name, "wrong parameters for interaction family"))
            }
            (other, _) => {
                return Err(Error::config(
                    other,
                    "unknown interaction family (none, mean-attraction, gaussian-kernel)",
                ))
            }
        };
        Ok(k)
    }

    #[inline]
    pub fn kernel(&self, x: f64, y: f64) -> f64 {
        match *self {
            Interaction::None => 0.0,
            Interaction::MeanAttraction { strength } => strength * (y - x),
            Interaction::GaussianKernel { strength, width } => {
                let d = y - x;
                strength * d * (-0.5 * d * d / (width * width)).exp()
            }
        }
    }

    pub fn is_none(&self) -> bool {
        match *self {
            Interaction::None => true,
            Interaction::MeanAttraction { strength } => strength == 0.0,
            Interaction::GaussianKernel { strength, .. } => strength == 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_range_includes_interior_extrema() {
        let c = Coefficient::Sine {
            mean: 2.0,
            amplitude: 0.5,
            frequency: 1.0,
        };
        let (lo, hi) = c.range_on(-4.0, 4.0);
        assert!((lo - 1.5).abs() < 1e-15 && (hi - 2.5).abs() < 1e-15);
        let (lo, hi) = c.range_on(0.0, 1.0);
        assert!((lo - 2.0).abs() < 1e-15 && (hi - c.eval(1.0)).abs() < 1e-15);
    }

    #[test]
    fn families_by_name() {
        assert_eq!(
            Coefficient::from_family("affine", &[1.0, 2.0]).unwrap().eval(3.0),
            7.0
        );
        assert!(Coefficient::from_family("affine", &[1.0]).is_err());
        assert!(Coefficient::from_family("cubic", &[1.0]).is_err());
        assert!(Interaction::from_family("gaussian-kernel", &[1.0, 0.0]).is_err());
        assert_eq!(
            Interaction::from_family("mean-attraction", &[1.0]).unwrap().kernel(0.0, 2.0),
            2.0
        );
    }
}
