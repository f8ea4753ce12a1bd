//! Statistical behaviour of the particle chain against closed-form moments.

use std::f64::consts::PI;

use fkinetic::ctrw::{evaluate_replicas, prelimit_generator_apply, run_steps, ChainRunner, ChainState, CtrwParams};
use fkinetic::fractional::limit_generator_apply;
use fkinetic::model::{Coefficient, EmpiricalMeasure, Interaction, ModelSpec, Observable, SFactor, TestFunctional};
use fkinetic::quad::Quadrature;
use fkinetic::random::RngStream;
use fkinetic::stats::Welford;
use rayon::prelude::*;

fn brownian(c: f64) -> ModelSpec {
    ModelSpec::simple((-20.0, 20.0), 1.0, c, 0.5).unwrap()
}

#[test]
fn long_runs_keep_particles_and_advance_time() {
    let spec = brownian(0.5);
    let mu0 = EmpiricalMeasure::gaussian_quantiles(64, 0.0, 0.3).unwrap();
    let params = CtrwParams::new(64, 1.0).unwrap();
    let mut runner = ChainRunner::new(ChainState::new(mu0, 0.0), params, &spec).unwrap();
    let mut rng = RngStream::new(1, 0);
    let mut last = runner.s();
    for k in 1..=50_000u64 {
        let rec = runner.step(&mut rng).unwrap();
        assert_eq!(rec.k, k);
        assert!(rec.s > last);
        last = rec.s;
        let moved = (rec.x_i_after - rec.x_i_before).abs();
        assert!((moved - params.h()).abs() < 1e-12);
    }
    assert_eq!(runner.positions().len(), 64);
}

#[test]
fn markov_mean_follows_drift() {
    // K = t/unit steps of one particle each: the empirical mean moves by
    // exactly K h² c / N = t c in expectation.
    let (n, t, c) = (20usize, 1.0, 1.0);
    let spec = brownian(c);
    let mu0 = EmpiricalMeasure::gaussian_quantiles(n, 0.0, 0.3).unwrap();
    let params = CtrwParams::new(n, t).unwrap();
    let steps = (t / params.time_unit()).round() as u64;
    let expected = steps as f64 * params.h().powi(2) * c / n as f64;
    assert!((expected - t * c).abs() < 1e-12);

    let w: Welford = (0..4000u64)
        .into_par_iter()
        .map(|id| {
            let end = run_steps(&mu0, 0.0, steps, &params, &spec, &mut RngStream::new(2, id)).unwrap();
            end.config.mean() - mu0.mean()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    assert!((w.mean() - expected).abs() < 3.0 * w.std_error(), "{} ± {}", w.mean(), w.std_error());
    // Variance of the mean is K (h/N)² G = t/N up to the drift bias.
    let var = w.std_error().powi(2) * 4000.0;
    assert!((var - t / n as f64).abs() < 0.1 * t / n as f64, "{var}");
}

#[test]
fn scaled_inverse_time_approaches_mittag_leffler_mean() {
    let n = 100;
    let spec = brownian(0.0);
    let mu0 = EmpiricalMeasure::gaussian_quantiles(n, 0.0, 0.3).unwrap();
    let params = CtrwParams::new(n, 1.0).unwrap();
    let one = TestFunctional::linear(Observable::Constant { value: 1.0 });
    let reps = evaluate_replicas(&one, &mu0, 0.0, 1.0, &params, &spec, 3, 2000).unwrap();
    assert!(reps.iter().all(|r| r.functional == 1.0 && r.final_s >= 1.0));
    let w: Welford = reps.iter().map(|r| r.inverse_time).collect();
    let target = 2.0 / PI;
    assert!((w.mean() - target).abs() < 3.0 * w.std_error() + 0.01, "{} ± {}", w.mean(), w.std_error());
}

#[test]
fn replicas_replay_from_their_stream() {
    let spec = brownian(1.0);
    let mu0 = EmpiricalMeasure::gaussian_quantiles(30, 0.0, 0.3).unwrap();
    let params = CtrwParams::new(30, 0.5).unwrap();
    let f = TestFunctional::quadratic(Observable::Identity);
    let all = evaluate_replicas(&f, &mu0, 0.0, 0.5, &params, &spec, 4, 40).unwrap();
    let one = evaluate_replicas(&f, &mu0, 0.0, 0.5, &params, &spec, 4, 13).unwrap();
    assert_eq!(&all[..13], &one[..]);
    for r in &all {
        assert_eq!(r.stream_id, all.iter().position(|q| q == r).unwrap() as u64);
    }
}

#[test]
fn chain_generator_converges_to_limit_generator() {
    let spec = ModelSpec::new(
        (-6.0, 6.0),
        Coefficient::Sine { mean: 1.0, amplitude: 0.3, frequency: 1.0 },
        Coefficient::Affine { intercept: 0.2, slope: -0.5 },
        Interaction::GaussianKernel { strength: 0.4, width: 1.0 },
        Coefficient::Gaussian { base: 1.0, amplitude: 0.4, center: 0.5, width: 1.0 },
        0.6,
    )
    .unwrap();
    let f = TestFunctional::quadratic(Observable::Gaussian { center: 0.3, width: 0.8 })
        .with_s_factor(SFactor::Exp { rate: 0.7 });
    let q = Quadrature::default();
    let gaps: Vec<f64> = [50usize, 200, 800, 3200]
        .iter()
        .map(|&n| {
            let mu = EmpiricalMeasure::gaussian_quantiles(n, 0.1, 0.6).unwrap();
            let params = CtrwParams::new(n, 1.0).unwrap();
            let pre = prelimit_generator_apply(&f, &mu, 0.2, &params, &spec, &q).unwrap();
            let lim = limit_generator_apply(&f, &mu, 0.2, &spec, &q).unwrap();
            (pre - lim).abs()
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    // First order in the spatial step h = N^(-1/2).
    let order = (gaps[0] / gaps[3]).ln() / 64f64.sqrt().ln();
    assert!((order - 1.0).abs() < 0.15, "{order}: {gaps:?}");
}
