//! Closed forms and sampling oracles for the SE side of the library.

use glmep::nonlinearity::{self, piecewise_affine, AffineRecord};
use glmep::sensing_operator::StructuredOperator;
use glmep::spectrum::{mse_functional, Flat, Geometric, SamplingMode, SpectrumFamily, SpectrumParams, TwoPoint};
use glmep::state_evolution::{
    informative_v_r, noise_sensitivity_slope, perfect_recovery_check, recovery_threshold, se_trace, StateEvolution,
    THRESHOLD_TOL,
};
use glmep::{Error, Spectrum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn std_normal_cdf(x: f64) -> f64 {
    let steps = 200_000;
    let (lo, h) = (-12.0, (x + 12.0) / steps as f64);
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (0..steps).map(|i| pdf(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

/// |z| on (-1, 1), flat at 1 outside.
fn clipped_abs() -> glmep::PiecewiseFunction {
    nonlinearity::saturating(1.0).unwrap()
}

#[test]
fn information_dimension_of_a_clipped_function() {
    let f = clipped_abs();
    let expected = 2.0 * std_normal_cdf(1.0) - 1.0;
    assert!((f.info_dimension() - expected).abs() < 1e-9);
    assert!((f.info_dimension() - 0.6827).abs() < 1e-4);
    assert!((f.mmse_dimension() - 0.3173).abs() < 1e-4);
    assert!((f.delta_opt() - 1.0 / expected).abs() < 1e-9);
    assert!((f.delta_opt() - 1.4648).abs() < 1e-4);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1_000_000;
    let hits = (0..n)
        .filter(|_| {
            let z: f64 = rng.sample(StandardNormal);
            !f.segments()[f.segment_index(z)].is_flat()
        })
        .count();
    let p = hits as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((p - f.info_dimension()).abs() < 3.0 * se, "{p} vs {}", f.info_dimension());
}

#[test]
fn catalog_dimensions() {
    assert_eq!(nonlinearity::abs().info_dimension(), 1.0);
    assert_eq!(nonlinearity::abs().mmse_dimension(), 0.0);
    assert_eq!(nonlinearity::abs().delta_opt(), 1.0);
    assert_eq!(nonlinearity::sign().info_dimension(), 0.0);
    assert_eq!(nonlinearity::sign().mmse_dimension(), 1.0);
    assert_eq!(nonlinearity::sign().delta_opt(), f64::INFINITY);
    let f = clipped_abs();
    assert_eq!(f.flat_levels(), vec![1.0]);
    let steps = piecewise_affine(
        "two_plateaus",
        &[
            AffineRecord { lo: f64::NEG_INFINITY, hi: -1.0, slope: 0.0, intercept: -1.0 },
            AffineRecord { lo: -1.0, hi: 1.0, slope: 1.0, intercept: 0.0 },
            AffineRecord { lo: 1.0, hi: f64::INFINITY, slope: 0.0, intercept: 1.0 },
        ],
    )
    .unwrap();
    assert_eq!(steps.flat_levels(), vec![-1.0, 1.0]);
}

#[test]
fn example3_values_and_roots() {
    let f = nonlinearity::example3();
    assert_eq!(f.evaluate(1.5), 0.5);
    let pre = f.preimage(0.5, 1e-12).unwrap();
    let mut roots: Vec<f64> = pre.points.iter().map(|p| p.0).collect();
    roots.sort_by(f64::total_cmp);
    // brute-force scan for continuous sign changes of f(z) - 0.5
    let mut scan = Vec::new();
    let h = 1e-4;
    let mut z = -4.0;
    while z < 4.0 {
        let (a, b) = (f.evaluate(z) - 0.5, f.evaluate(z + h) - 0.5);
        if (a == 0.0 || a * b < 0.0) && (a - b).abs() < 10.0 * h {
            scan.push(z);
        }
        z += h;
    }
    assert_eq!(roots.len(), scan.len());
    for (r, s) in roots.iter().zip(&scan) {
        assert!((r - s).abs() < 2.0 * h, "{r} vs {s}");
    }
    for (r, e) in roots.iter().zip([-1.5, -0.5, 0.5, 1.5]) {
        assert!((r - e).abs() < 1e-12);
    }
    assert!(pre.points.iter().all(|p| p.1.abs() == 1.0));
}

/// Stratified inverse-CDF sample average of h.
fn quantile_average(model: &dyn Spectrum, h: impl Fn(f64) -> f64, n: usize) -> f64 {
    (0..n).map(|i| h(model.quantile((i as f64 + 0.5) / n as f64))).sum::<f64>() / n as f64
}

#[test]
fn geometric_reciprocal_moment_matches_monte_carlo() {
    let g = Geometric::new(2.0, 5.0).unwrap();
    let exact = g.expect(&|l| 1.0 / l);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let x = 1.0 / g.sample_one(&mut rng);
        s += x;
        s2 += x * x;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    // closed form: E[1/λ] = (e^β - 1)/(c β) with c the upper edge
    let closed = (5f64.exp() - 1.0) / (g.top() * 5.0);
    assert!((exact - closed).abs() < 1e-10 * closed);
}

#[test]
fn mse_functional_matches_sampling() {
    let g = Geometric::new(1.1, 20.0).unwrap();
    let oracle = quantile_average(&g, |l| 0.5 / (0.5 + l), 1_000_000);
    assert!((mse_functional(&g, 0.5) - oracle).abs() < 1e-4);
}

#[test]
fn resolvent_trace_closed_form() {
    let n = 64;
    let op = StructuredOperator::build(2 * n, n, &Flat { delta: 2.0 }, 3, SamplingMode::Iid).unwrap();
    assert!((op.resolvent_trace(2.0) - 0.25).abs() < 1e-14);
}

#[test]
fn near_threshold_se_reaches_exact_recovery() {
    let f = nonlinearity::abs();
    let g = Geometric::new(1.01, 20.0).unwrap();
    let tr = se_trace(&f, &g, 1.01, 200, informative_v_r(20.0), 0.0).unwrap();
    assert!(tr.v_r_star < 1e-6, "{}", tr.v_r_star);
    assert!(tr.final_mse() < 1e-6);
}

#[test]
fn perfect_recovery_examples() {
    let abs = nonlinearity::abs();
    let tp = TwoPoint::new(1e-3, 0.9, 1.2).unwrap();
    assert!(perfect_recovery_check(&abs, &tp, 1.2, 128).unwrap());
    assert!(!perfect_recovery_check(&abs, &Flat { delta: 1.01 }, 1.01, 128).unwrap());
    let sign = nonlinearity::sign();
    for d in [1.5, 5.0, 20.0] {
        assert!(!perfect_recovery_check(&sign, &Flat { delta: d }, d, 128).unwrap());
    }
}

#[test]
fn sign_has_no_threshold() {
    let fam = SpectrumFamily::new("geometric", SpectrumParams::default().with("beta", 20.0));
    let err = recovery_threshold(&nonlinearity::sign(), &fam, THRESHOLD_TOL).unwrap_err();
    assert!(matches!(err, Error::NoRecovery { .. }), "{err}");
}

#[test]
fn threshold_brackets_the_switch() {
    let abs = nonlinearity::abs();
    let fam = SpectrumFamily::new("geometric", SpectrumParams::default().with("beta", 5.0));
    let t = recovery_threshold(&abs, &fam, THRESHOLD_TOL).unwrap();
    assert!(t.bracket.1 - t.bracket.0 <= THRESHOLD_TOL);
    let at = |d: f64| perfect_recovery_check(&abs, fam.at(d).unwrap().as_ref(), d, 128).unwrap();
    assert!(!at(t.bracket.0));
    assert!(at(t.bracket.1));
    assert!(t.delta >= abs.delta_opt());
}

#[test]
fn noise_slopes_are_positive_and_settle() {
    let f = nonlinearity::abs();
    let g = Geometric::new(1.1, 10.0).unwrap();
    let sigmas: Vec<f64> = (0..9).map(|k| 1e-6 * 4f64.powi(-k)).collect();
    let ns = noise_sensitivity_slope(&f, &g, 1.1, &sigmas, informative_v_r(20.0)).unwrap();
    assert!(ns.slopes.iter().all(|s| *s > 0.0 && s.is_finite()));
    let diffs: Vec<f64> = ns.slopes.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    assert!(diffs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6) + 1e-12), "{diffs:?}");
    assert!(ns.c > 0.0 && ns.c.is_finite());
}

#[test]
fn noisy_se_is_near_the_reference_mse() {
    let f = nonlinearity::abs();
    let g = Geometric::new(1.1, 10.0).unwrap();
    let se = StateEvolution::new(f, 1e-4);
    let tr = se.trace(&g, 1.1, 10, informative_v_r(20.0)).unwrap();
    let mse = tr.final_mse();
    assert!(mse > 2.18e-2 / 2.0 && mse < 2.18e-2 * 2.0, "{mse}");
}
