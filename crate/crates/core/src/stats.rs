//! Monte-Carlo summaries and the distribution distances used by the tests
//! and the harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GridDensity;

/// Streaming mean and variance (Welford), mergeable across workers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Parallel combination (Chan et al.).
    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    pub fn estimate(&self) -> MeanEstimate {
        MeanEstimate {
            mean: self.mean,
            std_error: self.std_error(),
            n: self.n,
        }
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::new();
        for x in iter {
            w.push(x);
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
}

/// `sqrt(a² + b²)` for independent errors.
pub fn combined_sigma(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

/// Relative round-off allowed on top of the statistical band, so that
/// noiseless estimates (zero standard error) can still agree.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

/// `|x - y| <= k * sqrt(sx² + sy²)`, plus [`ROUNDOFF_FLOOR`] relative to `max(1, |x|, |y|)`.
pub fn agree_within(x: f64, sx: f64, y: f64, sy: f64, k: f64) -> bool {
    let floor = ROUNDOFF_FLOOR * 1f64.max(x.abs()).max(y.abs());
    (x - y).abs() <= k * combined_sigma(sx, sy) + floor
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_pvalue(d: f64, n_eff: f64) -> f64 {
    let rn = n_eff.sqrt();
    kolmogorov_survival((rn + 0.12 + 0.11 / rn) * d)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::Statistics("KS test needs samples".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let c = cdf(x);
        d = d.max((i as f64 + 1.0) / n - c).max(c - i as f64 / n);
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_pvalue(d, n),
    })
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Statistics("KS test needs samples on both sides".into()));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_pvalue(d, na * nb / (na + nb)),
    })
}

/// Wasserstein-1 distance `∫ |F_atoms - F_grid| dx` between atoms and a
/// piecewise-constant density, computed exactly.
pub fn wasserstein1_to_grid(atoms: &[f64], grid: &GridDensity) -> Result<f64> {
    if atoms.is_empty() {
        return Err(Error::Statistics("W1 needs atoms".into()));
    }
    let mut xs = atoms.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let (lo, _) = grid.domain();
    let mut pts: Vec<f64> = (0..=grid.cells())
        .map(|i| lo + i as f64 * grid.dx())
        .chain(xs.iter().copied())
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mass = grid.mass();
    let mut total = 0.0;
    let mut k = 0;
    for w in pts.windows(2) {
        let (p, q) = (w[0], w[1]);
        while k < xs.len() && xs[k] <= p {
            k += 1;
        }
        let e = k as f64 / n;
        let (g0, g1) = (grid.cdf(p) / mass, grid.cdf(q) / mass);
        total += abs_linear_integral(e - g0, e - g1) * (q - p);
    }
    Ok(total)
}

/// Mean of `|l(t)|` over `[0,1]` for the linear `l` with `l(0)=u`, `l(1)=v`.
fn abs_linear_integral(u: f64, v: f64) -> f64 {
    if u * v >= 0.0 {
        0.5 * (u.abs() + v.abs())
    } else {
        0.5 * (u * u + v * v) / (u.abs() + v.abs())
    }
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Statistics("linear fit needs two or more paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Statistics("linear fit with constant abscissa".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}
