//! The right-sided fractional operator against an independent quadrature,
//! and the residual of the mixed equation on flows with known solutions.

use fkinetic::fractional::{
    mixed_equation_residual, right_caputo_fn, temporal_part, ResidualSettings,
};
use fkinetic::kinetic::solve_flow_grid;
use fkinetic::model::{Coefficient, GridDensity, ModelSpec, Observable, SFactor, TestFunctional};
use fkinetic::quad::Quadrature;

/// `-∫_0^L g'(s+y) y^(-β) dy` with `y = v^(1/(1-β))`, by composite Simpson
/// on a smooth integrand.
fn integrated_by_parts(dg: impl Fn(f64) -> f64, beta: f64, s: f64, t: f64) -> f64 {
    let p = 1.0 - beta;
    let upper = (t - s).powf(p);
    let n = 20_000;
    let h = upper / n as f64;
    let f = |v: f64| dg(s + v.powf(1.0 / p)) / p;
    let mut acc = f(0.0) + f(upper);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    -acc * h / 3.0
}

#[test]
fn sine_profile_matches_integration_by_parts() {
    let (beta, s, t) = (0.7, 0.3, 1.0);
    let got = right_caputo_fn(f64::sin, beta, s, t, 800, 1e-6).unwrap();
    let oracle = integrated_by_parts(f64::cos, beta, s, t);
    assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
}

#[test]
fn power_profile_closed_form() {
    // g(s) = (t - s)^q maps to q B(1-β, q) (t - s)^(q-β).
    let (beta, q, s, t) = (0.4, 2.0, 0.0, 1.5f64);
    let got = right_caputo_fn(|x| (t - x).powf(q), beta, s, t, 1600, 1e-6).unwrap();
    let oracle = integrated_by_parts(|x| -q * (t - x).powf(q - 1.0), beta, s, t);
    use statrs::function::beta::beta as beta_fn;
    let closed = q * beta_fn(1.0 - beta, q) * (t - s).powf(q - beta);
    assert!((oracle - closed).abs() < 1e-8);
    assert!((got - closed).abs() < 1e-6, "{got} vs {closed}");
}

#[test]
fn compactly_supported_time_factor_links_both_operators() {
    // With ψ vanishing from t on, the generator's temporal part is minus the
    // right operator of ψ on [s, t].
    let spec = ModelSpec::simple((-1.0, 1.0), 0.0, 0.0, 0.5).unwrap();
    let mu = GridDensity::gaussian(-1.0, 1.0, 100, 0.0, 0.2).unwrap();
    let t = 1.2;
    let psi = SFactor::Cutoff { end: t };
    let f = TestFunctional::linear(Observable::Constant { value: 1.0 }).with_s_factor(psi);
    for s in [0.0, 0.4, 0.9] {
        let temporal = temporal_part(&f, &mu, s, &spec, &Quadrature::default()).unwrap();
        let right = right_caputo_fn(|x| psi.eval(x), 0.5, s, t, 800, 1e-6).unwrap();
        assert!((temporal + right).abs() < 1e-5, "s = {s}: {temporal} vs {right}");
    }
}

fn residual_on(intensity: f64) -> fkinetic::fractional::ResidualReport {
    let spec = ModelSpec::simple((-4.0, 8.0), 0.0, 1.0, 0.5)
        .unwrap()
        .with_intensity(Coefficient::constant(intensity))
        .unwrap();
    let mu0 = GridDensity::gaussian(-4.0, 8.0, 600, 0.0, 0.3).unwrap();
    let mut flow = solve_flow_grid(&mu0, 1.0, 0.005, &spec).unwrap();
    let f = TestFunctional::linear(Observable::Identity);
    let settings = ResidualSettings::new(20_000, 2e-3, 100, 5);
    mixed_equation_residual(&f, &mut flow, 1.0, &[0.25, 0.5, 0.75], &settings).unwrap()
}

#[test]
fn residual_vanishes_within_noise_for_two_intensities() {
    for a in [1.0, 1.6] {
        let report = residual_on(a);
        assert!((report.beta - 0.5 * a).abs() < 1e-12);
        assert!((report.terminal_value - report.terminal_expected).abs() < 1e-9);
        for row in &report.rows {
            assert!((row.rhs - 1.0).abs() < 1e-9, "{row:?}");
            assert!(row.within(3.0), "a = {a}: {row:?}");
        }
    }
}
