//! Adaptive Gauss–Kronrod quadrature and the power-law kernel integrals
//! shared by the generator, derivative and rate modules.
//!
//! Every integral against `y^(-1-beta)` in this crate goes through
//! [`stable_head`] (near the singular endpoint) or [`stable_tail`] (out to
//! infinity). Both remove the power weight by a change of variables so the
//! adaptive rule only ever sees bounded, smooth-ish integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_208_745_125,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];

/// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-11,
            max_intervals: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk21(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    for j in 0..10 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

impl Quadrature {
    pub fn with_tolerance(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64) -> Result<QuadResult> {
        self.integrate_with_breaks(f, &[a, b])
    }

    /// Integrates over `[points[0], points[last]]`, seeding the subdivision
    /// with every interior point. Points must be sorted; duplicates are skipped.
    pub fn integrate_with_breaks(&self, f: impl Fn(f64) -> f64, points: &[f64]) -> Result<QuadResult> {
        let mut heap = BinaryHeap::new();
        for w in points.windows(2) {
            if w[1] > w[0] {
                heap.push(gk21(&f, w[0], w[1]));
            }
        }
        loop {
            let (value, error) = heap
                .iter()
                .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
            if !value.is_finite() {
                return Err(Error::Quadrature {
                    estimate: value,
                    error,
                    tolerance: self.abs_tol,
                });
            }
            let tolerance = self.abs_tol.max(self.rel_tol * value.abs());
            if error <= tolerance {
                return Ok(QuadResult { value, error });
            }
            if heap.len() >= self.max_intervals {
                return Err(Error::Quadrature {
                    estimate: value,
                    error,
                    tolerance,
                });
            }
            let worst = heap.pop().expect("non-empty segment heap");
            let mid = 0.5 * (worst.a + worst.b);
            if mid <= worst.a || mid >= worst.b {
                // Interval exhausted at machine precision; accept what we have.
                heap.push(Segment {
                    error: 0.0,
                    ..worst
                });
                continue;
            }
            heap.push(gk21(&f, worst.a, mid));
            heap.push(gk21(&f, mid, worst.b));
        }
    }
}

/// `∫_0^upper g(y) y^(-1-beta) dy` for `g(y) = O(y)` at the origin.
///
/// Substituting `y = w^(1/(1-beta))` turns the kernel into
/// `dw / ((1-beta) y)`, so the rule integrates the bounded ratio `g(y)/y`.
/// `breaks` are interior points in the original `y` variable.
pub fn stable_head(
    quad: &Quadrature,
    g: impl Fn(f64) -> f64,
    upper: f64,
    beta: f64,
    breaks: &[f64],
) -> Result<QuadResult> {
    if upper <= 0.0 {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
        });
    }
    let p = 1.0 - beta;
    let inv = 1.0 / p;
    let mut points = vec![0.0];
    points.extend(
        breaks
            .iter()
            .filter(|&&y| y > 0.0 && y < upper)
            .map(|&y| y.powf(p)),
    );
    points.push(upper.powf(p));
    points.sort_by(f64::total_cmp);
    let integrand = |w: f64| {
        if w <= 0.0 {
            return 0.0;
        }
        let y = w.powf(inv);
        if y <= 0.0 {
            return 0.0;
        }
        g(y) / y * inv
    };
    quad.integrate_with_breaks(integrand, &points)
}

/// `∫_lower^∞ g(y) y^(-1-beta) dy` for bounded `g`, with `lower > 0`.
///
/// Uses `y = lower * v^(-1/beta)`, under which the kernel becomes the flat
/// measure `lower^(-beta) / beta dv` on `(0, 1]`.
pub fn stable_tail(
    quad: &Quadrature,
    g: impl Fn(f64) -> f64,
    lower: f64,
    beta: f64,
    breaks: &[f64],
) -> Result<QuadResult> {
    let scale = lower.powf(-beta) / beta;
    let mut points = vec![0.0, 1.0];
    points.extend(
        breaks
            .iter()
            .filter(|&&y| y > lower && y.is_finite())
            .map(|&y| (lower / y).powf(beta)),
    );
    points.sort_by(f64::total_cmp);
    let inv = -1.0 / beta;
    let integrand = |v: f64| {
        if v <= 0.0 {
            return 0.0;
        }
        let y = lower * v.powf(inv);
        if !y.is_finite() {
            return 0.0;
        }
        g(y)
    };
    let r = quad.integrate_with_breaks(integrand, &points)?;
    Ok(QuadResult {
        value: r.value * scale,
        error: r.error * scale,
    })
}

/// `∫_lower^∞ g(y) y^(-1-beta) dy` for `lower >= 0` and `g(y) = O(y)` at
/// the origin, splitting into a head on `[0, max(1, 2 lower)]` (with `g`
/// masked below `lower`) and a tail beyond.
pub fn stable_from(
    quad: &Quadrature,
    g: impl Fn(f64) -> f64,
    lower: f64,
    beta: f64,
    breaks: &[f64],
) -> Result<QuadResult> {
    let split = (2.0 * lower).max(1.0);
    let mut head_breaks: Vec<f64> = breaks.to_vec();
    if lower > 0.0 {
        head_breaks.push(lower);
    }
    let head = stable_head(
        quad,
        |y| if y < lower { 0.0 } else { g(y) },
        split,
        beta,
        &head_breaks,
    )?;
    let tail = stable_tail(quad, &g, split, beta, breaks)?;
    Ok(QuadResult {
        value: head.value + tail.value,
        error: head.error + tail.error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_rule_is_exact_for_high_degree_polynomials() {
        let q = Quadrature::default();
        for deg in [0, 5, 19, 31] {
            let r = q.integrate(|x| x.powi(deg), 0.0, 1.0).unwrap();
            assert!((r.value - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14, "degree {deg}");
        }
    }

    #[test]
    fn adaptive_handles_sharp_peak() {
        let q = Quadrature::default();
        let w = 2e-2;
        let r = q
            .integrate(|x| (-(x - 0.3f64).powi(2) / (2.0 * w * w)).exp(), -1.0, 1.0)
            .unwrap();
        let exact = w * (2.0 * std::f64::consts::PI).sqrt();
        assert!((r.value - exact).abs() < 1e-12);
    }

    #[test]
    fn head_integral_of_linear_function() {
        // ∫_0^1 y * y^(-3/2) dy = 2
        let r = stable_head(&Quadrature::default(), |y| y, 1.0, 0.5, &[]).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tail_integral_of_constant() {
        // ∫_2^∞ y^(-1.7) dy = 2^(-0.7)/0.7
        let r = stable_tail(&Quadrature::default(), |_| 1.0, 2.0, 0.7, &[]).unwrap();
        assert!((r.value - 2f64.powf(-0.7) / 0.7).abs() < 1e-12);
    }

    #[test]
    fn split_integral_from_positive_lower_limit() {
        // ∫_c^∞ (1 - e^{-y}) y^{-3/2} dy against head-minus-piece.
        let q = Quadrature::default();
        let g = |y: f64| -(-y).exp_m1();
        let full = stable_from(&q, g, 0.0, 0.5, &[]).unwrap().value;
        assert!((full - 2.0 * std::f64::consts::PI.sqrt()).abs() < 1e-10);
        let c = 1e-3;
        let piece = q.integrate(|y| g(y) * y.powf(-1.5), 0.0, c).unwrap().value;
        let part = stable_from(&q, g, c, 0.5, &[]).unwrap().value;
        assert!((full - piece - part).abs() < 1e-10);
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let q = Quadrature {
            abs_tol: 0.0,
            rel_tol: 0.0,
            max_intervals: 8,
        };
        let err = q.integrate(|x: f64| x.abs().sqrt(), -1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }
}
