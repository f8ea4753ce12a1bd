//! Limiting flow: closed-form oracles, conservation, invariances and the
//! grid/ensemble cross-check.

use fkinetic::kinetic::{flow_functional, solve_flow_ensemble, solve_flow_grid, FlowMeasure, FlowSolution};
use fkinetic::model::{Coefficient, EmpiricalMeasure, GridDensity, Interaction, ModelSpec, Observable, TestFunctional};
use fkinetic::stats::wasserstein1_to_grid;
use fkinetic::Error;

fn heat(domain: (f64, f64), a: f64) -> ModelSpec {
    ModelSpec::new(
        domain,
        Coefficient::constant(1.0),
        Coefficient::constant(0.0),
        Interaction::None,
        Coefficient::constant(a),
        0.5,
    )
    .unwrap()
}

fn last_grid(flow: &FlowSolution) -> &GridDensity {
    match flow.measures().last().unwrap() {
        FlowMeasure::Grid(g) => g,
        FlowMeasure::Particles(_) => panic!("grid flow expected"),
    }
}

fn gaussian_pdf(x: f64, var: f64) -> f64 {
    (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Sup-norm distance to the heat kernel `N(0, σ0² + t)` at cell centres.
fn heat_error(cells: usize, dt_factor: f64) -> f64 {
    let spec = heat((-6.0, 6.0), 1.0);
    let mu0 = GridDensity::gaussian(-6.0, 6.0, cells, 0.0, 0.5).unwrap();
    // A step dividing the horizon, so the last snapshot sits at t = 0.5.
    let steps = (0.5 / (dt_factor * mu0.dx().powi(2))).ceil();
    let dt = 0.5 / steps;
    let flow = solve_flow_grid(&mu0, 0.5, dt, &spec).unwrap();
    let g = last_grid(&flow);
    assert!((flow.horizon() - 0.5).abs() < 1e-12);
    (0..g.cells())
        .map(|i| (g.values()[i] - gaussian_pdf(g.center(i), 0.75)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn heat_kernel_sup_norm_error() {
    let err = heat_error(1000, 0.5);
    assert!(err < 5e-3, "{err}");
}

#[test]
fn heat_kernel_error_is_second_order() {
    let coarse = heat_error(150, 0.5);
    let fine = heat_error(300, 0.5);
    let ratio = coarse / fine;
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio} ({coarse} -> {fine})");
}

#[test]
fn ornstein_uhlenbeck_stationary_density_is_kept() {
    let spec = ModelSpec::new(
        (-5.0, 5.0),
        Coefficient::constant(1.0),
        Coefficient::Affine {
            intercept: 0.0,
            slope: -1.0,
        },
        Interaction::None,
        Coefficient::constant(1.0),
        0.5,
    )
    .unwrap();
    let mu0 = GridDensity::gaussian(-5.0, 5.0, 400, 0.0, 0.5f64.sqrt()).unwrap();
    let flow = solve_flow_grid(&mu0, 1.0, 0.5 * mu0.dx().powi(2), &spec).unwrap();
    for m in flow.measures() {
        let FlowMeasure::Grid(g) = m else { panic!() };
        let sup = g
            .values()
            .iter()
            .zip(mu0.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-6, "sup-norm drift {sup}");
    }
}

#[test]
fn constant_intensity_rescaling_leaves_flow_unchanged() {
    let mu0 = GridDensity::gaussian(-6.0, 6.0, 300, 0.3, 0.7).unwrap();
    let base = heat((-6.0, 6.0), 1.0);
    let drifted = |a: f64| {
        ModelSpec::new(
            (-6.0, 6.0),
            Coefficient::Sine {
                mean: 1.0,
                amplitude: 0.3,
                frequency: 1.0,
            },
            Coefficient::Affine {
                intercept: 0.2,
                slope: -0.5,
            },
            Interaction::GaussianKernel {
                strength: 0.5,
                width: 1.0,
            },
            Coefficient::constant(a),
            0.5,
        )
        .unwrap()
    };
    for (s1, s2) in [(base.clone(), heat((-6.0, 6.0), 1.9)), (drifted(1.0), drifted(0.3))] {
        let a = solve_flow_grid(&mu0, 0.3, 1e-4, &s1).unwrap();
        let b = solve_flow_grid(&mu0, 0.3, 1e-4, &s2).unwrap();
        let diff = last_grid(&a)
            .values()
            .iter()
            .zip(last_grid(&b).values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-14, "{diff}");
    }
}

#[test]
fn mass_conserved_and_positive_with_interaction() {
    let spec = ModelSpec::new(
        (-5.0, 5.0),
        Coefficient::Gaussian {
            base: 0.5,
            amplitude: 0.5,
            center: 0.0,
            width: 1.0,
        },
        Coefficient::Sine {
            mean: 0.0,
            amplitude: 1.0,
            frequency: 2.0,
        },
        Interaction::MeanAttraction { strength: 1.0 },
        Coefficient::Affine {
            intercept: 1.0,
            slope: 0.05,
        },
        0.5,
    )
    .unwrap();
    let mu0 = GridDensity::gaussian(-5.0, 5.0, 200, 1.0, 0.6).unwrap();
    let flow = solve_flow_grid(&mu0, 1.0, 5e-4, &spec).unwrap();
    assert!(flow.diagnostics.max_mass_drift <= 1e-12, "{}", flow.diagnostics.max_mass_drift);
    for m in flow.measures() {
        let FlowMeasure::Grid(g) = m else { panic!() };
        assert!((g.mass() - 1.0).abs() < 1e-12);
        assert!(g.values().iter().all(|&v| v >= 0.0));
    }
    assert!(flow.betas().iter().all(|&b| b > 0.0 && b < 1.0));
}

#[test]
fn grid_and_ensemble_agree_in_wasserstein_distance() {
    let spec = ModelSpec::new(
        (-6.0, 6.0),
        Coefficient::constant(1.0),
        Coefficient::constant(0.5),
        Interaction::MeanAttraction { strength: 0.5 },
        Coefficient::constant(1.0),
        0.5,
    )
    .unwrap();
    let grid0 = GridDensity::gaussian(-6.0, 6.0, 600, 0.0, 0.5).unwrap();
    let grid = solve_flow_grid(&grid0, 1.0, 1e-4, &spec).unwrap();
    let atoms = EmpiricalMeasure::quantiles_of(&grid0, 10_000).unwrap();
    let ens = solve_flow_ensemble(&atoms, 1.0, 1e-3, &spec, 10_000, 7).unwrap();
    let FlowMeasure::Particles(p) = ens.measures().last().unwrap() else { panic!() };
    let w1 = wasserstein1_to_grid(p.positions(), last_grid(&grid)).unwrap();
    assert!(w1 < 0.02, "{w1}");
}

#[test]
fn functional_examples() {
    let spec = ModelSpec::simple((-3.0, 5.0), 0.0, 0.7, 0.5).unwrap();
    let mu0 = GridDensity::gaussian(-3.0, 5.0, 400, 0.2, 0.3).unwrap();
    let flow = solve_flow_grid(&mu0, 1.0, 0.01, &spec).unwrap();
    let x = TestFunctional::linear(Observable::Identity);
    let one = Observable::Constant { value: 1.0 };
    for u in [0.0, 0.33, 1.0] {
        assert!((flow_functional(&x, &flow, u).unwrap() - (mu0.mean() + 0.7 * u)).abs() < 1e-10);
        assert!((flow_functional(&TestFunctional::linear(one), &flow, u).unwrap() - 1.0).abs() < 1e-12);
        assert!((flow_functional(&TestFunctional::quadratic(one), &flow, u).unwrap() - 1.0).abs() < 1e-12);
    }
    assert!(matches!(flow_functional(&x, &flow, 1.5), Err(Error::Range { .. })));
}
