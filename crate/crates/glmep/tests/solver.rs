//! Monte Carlo behaviour of the solver on synthetic instances.

use std::sync::Arc;

use glmep::nonlinearity;
use glmep::solver::{iteration_quantiles, make_instance, run, run_trials, InitMode, Status, TrialSpec};
use glmep::spectrum::{Flat, Geometric, SamplingMode};
use glmep::state_evolution::{informative_v_r, StateEvolution};
use glmep::Spectrum;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn ks_distance(mut s: Vec<f64>) -> f64 {
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = std_normal_cdf(x);
            (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn measurements_are_gaussian() {
    let n = 1 << 14;
    let models: [(f64, Arc<dyn Spectrum>); 2] =
        [(2.0, Arc::new(Flat { delta: 2.0 })), (1.5, Arc::new(Geometric::new(1.5, 2.0).unwrap()))];
    for (delta, model) in models {
        let inst = make_instance(n, delta, &nonlinearity::abs(), model.as_ref(), 0.0, 17).unwrap();
        let z = inst.z.clone().unwrap();
        let m = z.len() as f64;
        let ks = ks_distance(z.clone());
        assert!(ks < 0.02, "{}: KS {ks}", model.name());
        let var = z.iter().map(|v| v * v).sum::<f64>() / m;
        let se = (2.0 / m).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se, "{}: var {var}", model.name());
    }
}

#[test]
fn snr_is_signal_over_noise_energy() {
    let g = Geometric::new(1.1, 10.0).unwrap();
    let sigma_w2 = 1e-4;
    let (mut sig, mut noise) = (0.0, 0.0);
    for seed in 0..8 {
        let inst = make_instance(1 << 13, 1.1, &nonlinearity::abs(), &g, sigma_w2, seed).unwrap();
        sig += inst.z.as_ref().unwrap().iter().map(|v| v * v).sum::<f64>();
        noise += inst.w.as_ref().unwrap().iter().map(|v| v * v).sum::<f64>();
    }
    let snr_db = 10.0 * (sig / noise).log10();
    assert!((snr_db - 40.0).abs() < 0.1, "{snr_db}");
}

#[test]
fn even_f_stalls_without_side_information() {
    let f = nonlinearity::abs();
    for model in [Arc::new(Flat { delta: 2.0 }) as Arc<dyn Spectrum>, Arc::new(Geometric::new(2.0, 20.0).unwrap())] {
        let inst = make_instance(1 << 12, 2.0, &f, model.as_ref(), 0.0, 4).unwrap();
        let out = run(&inst, &f, 10, InitMode::Uninformative, 9).unwrap();
        match &out.status {
            Status::Aborted(_) => {}
            _ => {
                for r in &out.history {
                    assert!((r.mse_n - 1.0).abs() < 0.05, "{}: mse {} at t = {}", model.name(), r.mse_n, r.t);
                }
            }
        }
    }
}

#[test]
fn median_tracks_state_evolution() {
    let (n, trials, t_max) = (1 << 15, 50, 30);
    let f = Arc::new(nonlinearity::abs());
    let se = StateEvolution::shared(f.clone(), 0.0);
    for beta in [0.0, 10.0, 20.0] {
        for delta in [1.05, 1.2] {
            let model: Arc<dyn Spectrum> = Arc::new(Geometric::new(delta, beta).unwrap());
            let spec = TrialSpec {
                n,
                delta,
                f: f.clone(),
                model: model.clone(),
                sigma_w2: 0.0,
                t_max,
                init: InitMode::Informative { v: 20.0 },
                sampling: SamplingMode::Iid,
            };
            let reports = run_trials(&spec, trials, 2024).unwrap();
            let padded: Vec<Vec<f64>> = reports.iter().map(|r| r.padded_history(t_max)).collect();
            let pred = se.trace(model.as_ref(), delta, t_max, informative_v_r(20.0)).unwrap();
            let last = pred.final_mse();
            for (t, med, _, _) in iteration_quantiles(&padded, t_max) {
                let s = pred.states.get(t - 1).map_or(last, |s| s.predicted_mse);
                let ok = if s < 1e-2 { (med - s).abs() <= 1e-3 } else { (med - s).abs() <= 0.15 * s };
                assert!(ok, "beta {beta}, delta {delta}, t {t}: median {med} vs SE {s}");
            }
        }
    }
}

#[test]
fn noise_floor_scales_with_variance() {
    let f = nonlinearity::abs();
    let g = Geometric::new(1.1, 10.0).unwrap();
    let inv_lambda = g.expect(&|l| 1.0 / l);
    let mut ratios = Vec::new();
    for sigma_w2 in [1e-4, 1e-5] {
        let mut acc = 0.0;
        for seed in 0..4 {
            let inst = make_instance(1 << 14, 1.1, &f, &g, sigma_w2, seed).unwrap();
            let out = run(&inst, &f, 30, InitMode::Informative { v: 20.0 }, seed + 100).unwrap();
            acc += out.final_mse().unwrap();
        }
        ratios.push(acc / 4.0 / (sigma_w2 * inv_lambda));
    }
    assert!(ratios.iter().all(|c| *c > 0.0 && c.is_finite()), "{ratios:?}");
    assert!((ratios[0] / ratios[1] - 1.0).abs() < 0.25, "{ratios:?}");
}
