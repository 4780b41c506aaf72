#![allow(dead_code)]

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use seqloc::model::{BsConstellation, FullParams, MeasurementBatch};
use seqloc::simulator::{
    square_corners, synthesize_batch, ClockModel, Motion, NoiseModel, ScenarioConfig, TdmaSchedule, Trajectory,
};

pub struct Case {
    pub bs: BsConstellation,
    pub batch: MeasurementBatch,
    pub truth: FullParams,
}

pub fn v2(x: f64, y: f64) -> DVector<f64> {
    DVector::from_vec(vec![x, y])
}

pub fn scenario(bs: BsConstellation, motion: Motion, sigma: f64) -> ScenarioConfig {
    let n_bs = bs.len();
    ScenarioConfig {
        bs,
        motion,
        clock: ClockModel::default(),
        schedule: TdmaSchedule::round_robin(n_bs),
        m_per_fix: 2 * n_bs,
        epoch_index: 0,
        noise: NoiseModel::Uniform(sigma),
        seed: 0,
        n_trials: 1,
    }
}

/// Canonical 30 m square with the user device moving at `v` from (15, 15).
pub fn canonical_case(v: DVector<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> Case {
    let cfg = scenario(
        square_corners(30.0),
        Motion::Fixed(Trajectory::ConstantVelocity {
            position: v2(15.0, 15.0),
            t_ref: 0.0,
            velocity: v,
        }),
        sigma,
    );
    let (batch, truth) = synthesize_batch(&cfg, 0, rng).unwrap();
    Case {
        bs: cfg.bs,
        batch,
        truth,
    }
}

/// Base stations uniform in a 30 m square (cube for 3-D), the user device
/// uniform in the central 10 m region moving at up to `max_speed`.
pub fn random_case(rng: &mut ChaCha8Rng, dim: usize, max_speed: f64, sigma: f64) -> Case {
    let n_bs = if dim == 2 { 4 } else { 6 };
    let bs = BsConstellation::new(
        (0..n_bs)
            .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(0.0..30.0)))
            .collect(),
    )
    .unwrap();
    let speed = rng.random_range(0.0..max_speed);
    let cfg = scenario(
        bs,
        Motion::RandomLinear {
            center: DVector::from_element(dim, 15.0),
            side: 10.0,
            speed,
        },
        sigma,
    );
    let (batch, truth) = synthesize_batch(&cfg, 0, rng).unwrap();
    Case {
        bs: cfg.bs,
        batch,
        truth,
    }
}
