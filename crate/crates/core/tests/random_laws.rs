//! Distributional checks of the samplers against independent oracles.

use std::f64::consts::PI;

use fkinetic::random::{sample_onesided_stable, sample_pareto_waiting, RngStream};
use fkinetic::stats::{ks_one_sample, ks_two_sample, Welford};
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;

fn draws(n: usize, seed: u64, mut f: impl FnMut(&mut RngStream) -> f64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, 0);
    (0..n).map(|_| f(&mut rng)).collect()
}

#[test]
fn pareto_tail_is_a_power_law() {
    let beta = 0.5;
    let xs = draws(1_000_000, 1, |r| sample_pareto_waiting(beta, r).unwrap());
    assert!(xs.iter().all(|&x| x >= 1.0));
    let n = xs.len() as f64;
    for rho in [2.0f64, 4.0, 8.0] {
        let p = rho.powf(-beta);
        let hits = xs.iter().filter(|&&x| x > rho).count() as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        assert!((hits - p).abs() < 3.0 * se, "rho {rho}: {hits} vs {p}");
    }
}

#[test]
fn pareto_sample_means_keep_growing() {
    // Infinite mean: the typical sample mean grows like n^(1/β - 1).
    let beta = 0.6;
    let sizes = [100usize, 1_000, 10_000, 100_000];
    let mut medians = Vec::new();
    for &n in &sizes {
        let mut means: Vec<f64> = (0..21)
            .map(|k| {
                let mut rng = RngStream::new(2, k);
                (0..n).map(|_| sample_pareto_waiting(beta, &mut rng).unwrap()).sum::<f64>() / n as f64
            })
            .collect();
        means.sort_by(f64::total_cmp);
        medians.push(means[10]);
    }
    assert!(medians.windows(2).all(|w| w[1] > w[0]), "{medians:?}");
}

#[test]
fn stable_laplace_transform() {
    for (beta, n) in [(0.5, 1_000_000), (0.3, 200_000), (0.8, 200_000)] {
        let xs = draws(n, 3, |r| sample_onesided_stable(beta, r).unwrap());
        assert!(xs.iter().all(|&x| x > 0.0));
        for lambda in [0.5f64, 1.0, 2.0] {
            let w: Welford = xs.iter().map(|&x| (-lambda * x).exp()).collect();
            let target = (-lambda.powf(beta)).exp();
            assert!(
                (w.mean() - target).abs() < 3.0 * w.std_error(),
                "beta {beta} lambda {lambda}: {} ± {} vs {target}",
                w.mean(),
                w.std_error()
            );
        }
    }
}

/// CDF of `1 / (2 Z²)`: `P(Z² ≥ 1/(2x)) = erfc(sqrt(1/(4x)))`.
fn half_inverse_square_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        erfc((0.25 / x).sqrt())
    }
}

#[test]
fn half_order_stable_is_half_inverse_square_normal() {
    let xs = draws(100_000, 4, |r| sample_onesided_stable(0.5, r).unwrap());
    let ks = ks_one_sample(&xs, half_inverse_square_cdf).unwrap();
    assert!(ks.statistic < 0.005, "{ks:?}");
    assert!(ks.p_value > 0.01, "{ks:?}");

    // Independent sampler built from normal draws.
    let mut rng = RngStream::new(5, 0);
    let ys: Vec<f64> = (0..100_000)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            1.0 / (2.0 * z * z)
        })
        .collect();
    let two = ks_two_sample(&xs, &ys).unwrap();
    assert!(two.p_value > 0.01, "{two:?}");

    // The law 1/(4Z²) has Laplace transform exp(-sqrt(λ/2)) and is clearly rejected.
    let quarter = ks_one_sample(&xs, |x| half_inverse_square_cdf(2.0 * x)).unwrap();
    assert!(quarter.statistic > 0.1, "{quarter:?}");
}

#[test]
fn half_order_mean_of_exp_matches_closed_form() {
    // E exp(-σ) for σ = 1/(2Z²) by deterministic quadrature over Z.
    let quad = fkinetic::quad::Quadrature::default();
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    let v = 2.0 * quad.integrate(|z| phi(z) * (-1.0 / (2.0 * z * z)).exp(), 0.0, 12.0).unwrap().value;
    assert!((v - (-1.0f64).exp()).abs() < 1e-10, "{v}");
}

#[test]
fn streams_replay_and_are_schedule_independent() {
    use rayon::prelude::*;
    let serial: Vec<f64> = (0..64u64)
        .map(|id| sample_onesided_stable(0.4, &mut RngStream::new(9, id)).unwrap())
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let parallel: Vec<f64> = pool.install(|| {
        (0..64u64)
            .into_par_iter()
            .map(|id| sample_onesided_stable(0.4, &mut RngStream::new(9, id)).unwrap())
            .collect()
    });
    assert_eq!(serial, parallel);
}
