mod common;

use approx::assert_relative_eq;
use common::{scenario, v2};
use nalgebra::DVector;
use seqloc::analysis::theoretical_rmse;
use seqloc::estimators::SolverConfig;
use seqloc::model::{predict_pseudorange, FullParams, Variant};
use seqloc::simulator::{
    run_monte_carlo, square_corners, synthesize_batch, trial_rng, trial_trajectory, ClockModel, EstimatorSpec, Motion,
    ScenarioConfig, Trajectory,
};

fn moving(speed: f64, sigma: f64) -> ScenarioConfig {
    scenario(
        square_corners(30.0),
        Motion::RandomLinear {
            center: v2(15.0, 15.0),
            side: 10.0,
            speed,
        },
        sigma,
    )
}

/// Noise draws recovered as `ρ_i` minus the noise-free pseudorange.
fn noise_samples(cfg: &ScenarioConfig, batches: usize) -> Vec<Vec<f64>> {
    (0..batches)
        .map(|k| {
            let mut rng = trial_rng(cfg.seed, k as u64);
            let traj = trial_trajectory(cfg, 0, &mut trial_rng(cfg.seed, k as u64));
            let (batch, _) = synthesize_batch(cfg, 0, &mut rng).unwrap();
            batch
                .entries()
                .iter()
                .map(|m| {
                    let (p, v) = traj.state(m.t);
                    let at = FullParams::new(p, cfg.clock.offset(m.t), cfg.clock.drift, v);
                    m.rho - predict_pseudorange(cfg.bs.position(m.bs_index), &at, 0.0)
                })
                .collect()
        })
        .collect()
}

#[test]
fn noise_has_requested_moments() {
    let sigma = 0.1;
    let cfg = moving(5.0, sigma);
    let draws: Vec<f64> = noise_samples(&cfg, 12_500).concat();
    assert_eq!(draws.len(), 100_000);
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 4.0 * sigma / n.sqrt(), "mean {mean}");
    assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "variance {var}");
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn noise_is_uncorrelated_across_entries_and_trials() {
    let cfg = moving(5.0, 1.0);
    let draws = noise_samples(&cfg, 100_001);
    let first: Vec<f64> = draws.iter().map(|d| d[0]).collect();
    let second: Vec<f64> = draws.iter().map(|d| d[1]).collect();
    assert!(correlation(&first[..100_000], &second[..100_000]).abs() < 0.01);
    assert!(correlation(&first[..100_000], &first[1..]).abs() < 0.01);
}

#[test]
fn zero_noise_reproduces_model() {
    let cfg = moving(12.0, 1e-300);
    let draws = noise_samples(&cfg, 50).concat();
    assert!(draws.iter().all(|x| x.abs() < 1e-9));
}

#[test]
fn every_window_covers_each_station_once() {
    let mut cfg = moving(1.0, 0.1);
    cfg.schedule.bs_order = vec![3, 1, 0, 2];
    cfg.m_per_fix = 11;
    let mut rng = trial_rng(0, 0);
    let (batch, _) = synthesize_batch(&cfg, 2, &mut rng).unwrap();
    let order: Vec<usize> = batch.entries().iter().map(|m| m.bs_index).collect();
    for window in order.windows(4) {
        let mut w = window.to_vec();
        w.sort_unstable();
        assert_eq!(w, vec![0, 1, 2, 3]);
    }
}

#[test]
fn circular_speed_is_constant() {
    let traj = Trajectory::Circular {
        center: v2(50.0, 50.0),
        radius: 30.0,
        angular_rate: -1.0 / 3.0,
        phase: 0.7,
    };
    for k in 0..1000 {
        let (p, v) = traj.state(k as f64 * 0.361);
        assert_relative_eq!(v.norm(), 10.0, epsilon = 1e-12);
        assert_relative_eq!((p - v2(50.0, 50.0)).norm(), 30.0, epsilon = 1e-12);
    }
}

#[test]
fn clock_is_linear() {
    let clock = ClockModel::default();
    for (t1, t2) in [(0.0, 0.01), (3.5, 360.0), (-2.0, 7.25)] {
        assert_relative_eq!(
            clock.offset(t2) - clock.offset(t1),
            clock.drift * (t2 - t1),
            max_relative = 1e-12
        );
    }
}

#[test]
fn runs_are_deterministic_across_pool_sizes() {
    let mut cfg = moving(8.0, 0.1);
    cfg.n_trials = 200;
    cfg.seed = 99;
    let specs = [EstimatorSpec::KVD, EstimatorSpec::Uvd, EstimatorSpec::LspmD];
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_monte_carlo(&cfg, &specs, &SolverConfig::default()).unwrap())
    };
    let one = run(1);
    let many = run(4);
    assert_eq!(one, many);
    assert_eq!(one, run(3));
}

#[test]
fn stationary_kvd_reaches_its_bound() {
    let mut cfg = moving(0.0, 0.1);
    cfg.n_trials = 1000;
    cfg.seed = 5;
    let recs = run_monte_carlo(&cfg, &[EstimatorSpec::KVD], &SolverConfig::default()).unwrap();
    let (mut emp, mut theory) = (0.0, 0.0);
    for r in &recs {
        emp += r.outcomes[0].error.as_ref().unwrap().norm_squared();
        theory += theoretical_rmse(Variant::Kvd, &r.batch, &cfg.bs, &r.truth, None)
            .unwrap()
            .mse();
    }
    let ratio = (emp / theory).sqrt();
    assert!((0.9..=1.1).contains(&ratio), "ratio {ratio}");
    assert!(recs.iter().all(|r| r.truth.v == DVector::zeros(2)));
}
