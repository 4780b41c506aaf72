//! Ground truth, noisy batches and the Monte Carlo runner.
//!
//! Every trial draws from its own random stream keyed on `(seed, trial)`,
//! so results do not depend on how trials are scheduled across threads.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{
    initial_guess, solve_ilspm_kvd, solve_ilspm_pvd, solve_ilspm_uvd, solve_lspm_d, EstimateReport, SolverConfig,
};
use crate::model::{BsConstellation, FullParams, Measurement, MeasurementBatch, VelocityPrior};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Name of the generator behind [`trial_rng`], for run metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9): key = seed_from_u64(seed), stream = trial index";

/// Random stream for one trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    Stationary {
        position: DVector<f64>,
    },
    /// Straight line through `position` at time `t_ref`.
    ConstantVelocity {
        position: DVector<f64>,
        t_ref: f64,
        velocity: DVector<f64>,
    },
    /// Counter-clockwise for positive `angular_rate`; in the xy plane for 3-D
    /// centers, at the center's height.
    Circular {
        center: DVector<f64>,
        radius: f64,
        angular_rate: f64,
        phase: f64,
    },
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        match self {
            Trajectory::Stationary { position } | Trajectory::ConstantVelocity { position, .. } => position.len(),
            Trajectory::Circular { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Trajectory::Stationary { position } => finite("position", position.iter()),
            Trajectory::ConstantVelocity {
                position,
                t_ref,
                velocity,
            } => {
                if position.len() != velocity.len() {
                    return Err(Error::DimensionMismatch("trajectory position vs velocity".into()));
                }
                finite("trajectory", position.iter().chain(velocity.iter()).chain([t_ref]))
            }
            Trajectory::Circular {
                center,
                radius,
                angular_rate,
                phase,
            } => {
                if !(*radius > 0.0) {
                    return Err(Error::InvalidInput("circle radius must be positive".into()));
                }
                finite("circle", center.iter().chain([radius, angular_rate, phase]))
            }
        }
    }

    /// Position and velocity at time `t`.
    pub fn state(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        match self {
            Trajectory::Stationary { position } => (position.clone(), DVector::zeros(position.len())),
            Trajectory::ConstantVelocity {
                position,
                t_ref,
                velocity,
            } => (position + velocity * (t - t_ref), velocity.clone()),
            Trajectory::Circular {
                center,
                radius,
                angular_rate,
                phase,
            } => {
                let angle = angular_rate * t + phase;
                let (s, c) = angle.sin_cos();
                let mut p = center.clone();
                p[0] += radius * c;
                p[1] += radius * s;
                let mut v = DVector::zeros(center.len());
                v[0] = -radius * angular_rate * s;
                v[1] = radius * angular_rate * c;
                (p, v)
            }
        }
    }
}

fn finite<'a>(what: &str, mut values: impl Iterator<Item = &'a f64>) -> Result<()> {
    if values.all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite values")))
    }
}

/// Linear clock: `b(t) = b0 + drift (t - t_ref)`, both in range units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockModel {
    pub b0: f64,
    pub drift: f64,
    pub t_ref: f64,
}

impl ClockModel {
    /// Drift given as a fractional frequency error in parts per million.
    pub fn from_ppm(b0: f64, ppm: f64, t_ref: f64) -> Self {
        Self {
            b0,
            drift: ppm * 1e-6 * SPEED_OF_LIGHT,
            t_ref,
        }
    }

    pub fn offset(&self, t: f64) -> f64 {
        self.b0 + self.drift * (t - self.t_ref)
    }
}

impl Default for ClockModel {
    /// 30 m initial offset, 5 ppm drift.
    fn default() -> Self {
        Self::from_ppm(30.0, 5.0, 0.0)
    }
}

/// Round-robin broadcast slots.
#[derive(Debug, Clone, PartialEq)]
pub struct TdmaSchedule {
    pub slot_interval: f64,
    pub bs_order: Vec<usize>,
    pub start_time: f64,
}

impl TdmaSchedule {
    pub fn round_robin(n_bs: usize) -> Self {
        Self {
            slot_interval: 0.01,
            bs_order: (0..n_bs).collect(),
            start_time: 0.0,
        }
    }

    pub fn slot_time(&self, slot: usize) -> f64 {
        self.start_time + slot as f64 * self.slot_interval
    }

    pub fn slot_bs(&self, slot: usize) -> usize {
        self.bs_order[slot % self.bs_order.len()]
    }

    fn validate(&self, n_bs: usize) -> Result<()> {
        if !(self.slot_interval > 0.0) || !self.slot_interval.is_finite() {
            return Err(Error::InvalidInput("slot interval must be positive".into()));
        }
        if !self.start_time.is_finite() {
            return Err(Error::InvalidInput("schedule start time is not finite".into()));
        }
        let mut sorted = self.bs_order.clone();
        sorted.sort_unstable();
        if sorted != (0..n_bs).collect::<Vec<_>>() {
            return Err(Error::InvalidInput(format!(
                "bs_order must be a permutation of 0..{n_bs}, got {:?}",
                self.bs_order
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    Uniform(f64),
    PerBs(Vec<f64>),
}

impl NoiseModel {
    pub fn sigma(&self, bs_index: usize) -> f64 {
        match self {
            NoiseModel::Uniform(s) => *s,
            NoiseModel::PerBs(s) => s[bs_index],
        }
    }

    fn validate(&self, n_bs: usize) -> Result<()> {
        let ok = match self {
            NoiseModel::Uniform(s) => *s > 0.0 && s.is_finite(),
            NoiseModel::PerBs(s) => s.len() == n_bs && s.iter().all(|x| *x > 0.0 && x.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid noise model {self:?}")))
        }
    }
}

/// How the user device moves across trials.
#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    /// One trajectory; trial `k` is the `k`-th consecutive fix along it.
    Fixed(Trajectory),
    /// Each trial places the user device uniformly in a square (cube) of side
    /// `side` around `center`, moving at `speed` in a uniformly random
    /// direction.
    RandomLinear {
        center: DVector<f64>,
        side: f64,
        speed: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub bs: BsConstellation,
    pub motion: Motion,
    pub clock: ClockModel,
    pub schedule: TdmaSchedule,
    pub m_per_fix: usize,
    /// Position in each batch of the measurement whose time is the
    /// localization epoch.
    pub epoch_index: usize,
    pub noise: NoiseModel,
    pub seed: u64,
    pub n_trials: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.bs.dim();
        let motion_dim = match &self.motion {
            Motion::Fixed(traj) => {
                traj.validate()?;
                traj.dim()
            }
            Motion::RandomLinear { center, side, speed } => {
                if !(*side >= 0.0) || !(*speed >= 0.0) {
                    return Err(Error::InvalidInput(
                        "placement side and speed must be non-negative".into(),
                    ));
                }
                finite("placement center", center.iter().chain([side, speed]))?;
                center.len()
            }
        };
        if motion_dim != n {
            return Err(Error::DimensionMismatch(format!(
                "motion is {motion_dim}-D, base stations are {n}-D"
            )));
        }
        if self.m_per_fix == 0 {
            return Err(Error::InvalidInput("m_per_fix must be at least 1".into()));
        }
        if self.epoch_index >= self.m_per_fix {
            return Err(Error::InvalidInput(format!(
                "epoch index {} outside a batch of {}",
                self.epoch_index, self.m_per_fix
            )));
        }
        if self.n_trials == 0 {
            return Err(Error::InvalidInput("n_trials must be at least 1".into()));
        }
        finite("clock", [self.clock.b0, self.clock.drift, self.clock.t_ref].iter())?;
        self.schedule.validate(self.bs.len())?;
        self.noise.validate(self.bs.len())
    }

    /// Number of consecutive non-overlapping fixes that fit in `duration` seconds.
    pub fn fixes_in(&self, duration: f64) -> usize {
        (duration / (self.schedule.slot_interval * self.m_per_fix as f64) + 1e-9).floor() as usize
    }
}

/// True position, velocity and clock state at `t`.
pub fn truth_state(traj: &Trajectory, clock: &ClockModel, t: f64) -> FullParams {
    let (p, v) = traj.state(t);
    FullParams::new(p, clock.offset(t), clock.drift, v)
}

fn random_direction<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    if n == 2 {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let (s, c) = angle.sin_cos();
        return DVector::from_vec(vec![c, s]);
    }
    loop {
        let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 1e-12 {
            return g / norm;
        }
    }
}

/// Draws the trajectory a trial follows. Fixed motion consumes no randomness.
pub fn trial_trajectory<R: Rng>(cfg: &ScenarioConfig, fix_index: usize, rng: &mut R) -> Trajectory {
    match &cfg.motion {
        Motion::Fixed(traj) => traj.clone(),
        Motion::RandomLinear { center, side, speed } => {
            let n = center.len();
            let position = DVector::from_fn(n, |i, _| center[i] + side * (rng.random::<f64>() - 0.5));
            let velocity = random_direction(n, rng) * *speed;
            let t_ref = cfg.schedule.slot_time(fix_index * cfg.m_per_fix);
            Trajectory::ConstantVelocity {
                position,
                t_ref,
                velocity,
            }
        }
    }
}

/// Noisy batch for fix `fix_index` and the truth at its epoch.
pub fn synthesize_batch<R: Rng>(
    cfg: &ScenarioConfig,
    fix_index: usize,
    rng: &mut R,
) -> Result<(MeasurementBatch, FullParams)> {
    let traj = trial_trajectory(cfg, fix_index, rng);
    synthesize_on(cfg, &traj, fix_index, rng)
}

/// Like [`synthesize_batch`] on an explicit trajectory.
pub fn synthesize_on<R: Rng>(
    cfg: &ScenarioConfig,
    traj: &Trajectory,
    fix_index: usize,
    rng: &mut R,
) -> Result<(MeasurementBatch, FullParams)> {
    let first_slot = fix_index * cfg.m_per_fix;
    let entries: Vec<Measurement> = (0..cfg.m_per_fix)
        .map(|i| {
            let slot = first_slot + i;
            let t = cfg.schedule.slot_time(slot);
            let bs_index = cfg.schedule.slot_bs(slot);
            let sigma = cfg.noise.sigma(bs_index);
            let (p, _) = traj.state(t);
            let noise: f64 = rng.sample(StandardNormal);
            Measurement {
                bs_index,
                t,
                rho: (cfg.bs.position(bs_index) - p).norm() + cfg.clock.offset(t) + sigma * noise,
                sigma,
            }
        })
        .collect();
    let t_l = entries[cfg.epoch_index].t;
    let batch = MeasurementBatch::new(entries, t_l)?;
    let truth = truth_state(traj, &cfg.clock, batch.t_l());
    Ok((batch, truth))
}

/// Which prior mean the PVD receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorMean {
    /// The true velocity at the epoch.
    Truth,
    /// The true velocity plus a draw from the prior itself, as a velocity
    /// sensor with that error would report.
    Sampled,
}

/// Estimator to run on every trial, with its velocity inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorSpec {
    /// Known velocity: the true velocity with its speed increased by
    /// `deviation` m/s along the direction of travel (the x-axis when at
    /// rest).
    Kvd {
        deviation: f64,
    },
    Uvd,
    Pvd {
        prior_std: f64,
        prior_mean: PriorMean,
    },
    LspmD,
}

impl EstimatorSpec {
    pub const KVD: EstimatorSpec = EstimatorSpec::Kvd { deviation: 0.0 };

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::Kvd { .. } => "kvd",
            EstimatorSpec::Uvd => "uvd",
            EstimatorSpec::Pvd { .. } => "pvd",
            EstimatorSpec::LspmD => "lspm-d",
        }
    }

    /// Velocity handed to the KVD.
    pub fn known_velocity(&self, truth: &FullParams) -> DVector<f64> {
        match self {
            EstimatorSpec::Kvd { deviation } if *deviation != 0.0 => {
                let speed = truth.v.norm();
                let dir = if speed > 0.0 {
                    &truth.v / speed
                } else {
                    let mut e = DVector::zeros(truth.dim());
                    e[0] = 1.0;
                    e
                };
                &truth.v + dir * *deviation
            }
            _ => truth.v.clone(),
        }
    }

    /// Prior handed to the PVD; `velocity_noise` is the trial's standard
    /// normal draw.
    pub fn prior(&self, truth: &FullParams, velocity_noise: &DVector<f64>) -> Result<Option<VelocityPrior>> {
        match self {
            EstimatorSpec::Pvd { prior_std, prior_mean } => {
                let mean = match prior_mean {
                    PriorMean::Truth => truth.v.clone(),
                    PriorMean::Sampled => &truth.v + velocity_noise * *prior_std,
                };
                VelocityPrior::isotropic(mean, *prior_std).map(Some)
            }
            _ => Ok(None),
        }
    }

    pub fn solve(
        &self,
        batch: &MeasurementBatch,
        bs: &BsConstellation,
        truth: &FullParams,
        velocity_noise: &DVector<f64>,
        cfg: &SolverConfig,
    ) -> Result<EstimateReport<FullParams>> {
        let n = bs.dim();
        match self {
            EstimatorSpec::Kvd { .. } => {
                let v = self.known_velocity(truth);
                let init = initial_guess(batch, bs, &v)?.kvd();
                let rep = solve_ilspm_kvd(batch, bs, &v, &init, cfg)?;
                Ok(lift(rep, v))
            }
            EstimatorSpec::LspmD => {
                let v = DVector::zeros(n);
                let init = initial_guess(batch, bs, &v)?.kvd();
                let rep = solve_lspm_d(batch, bs, &init, cfg)?;
                Ok(lift(rep, v))
            }
            EstimatorSpec::Uvd => {
                let init = initial_guess(batch, bs, &DVector::zeros(n))?;
                solve_ilspm_uvd(batch, bs, &init, cfg)
            }
            EstimatorSpec::Pvd { .. } => {
                let prior = self.prior(truth, velocity_noise)?.expect("pvd has a prior");
                let init = initial_guess(batch, bs, prior.mean())?;
                solve_ilspm_pvd(batch, bs, &prior, &init, cfg)
            }
        }
    }
}

fn lift(rep: EstimateReport<crate::model::KvdParams>, v: DVector<f64>) -> EstimateReport<FullParams> {
    EstimateReport {
        params: rep.params.with_velocity(v),
        iterations: rep.iterations,
        converged: rep.converged,
        covariance: rep.covariance,
        final_step_norm: rep.final_step_norm,
    }
}

/// What one estimator produced on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOutcome {
    pub estimator: EstimatorSpec,
    pub converged: bool,
    pub iterations: usize,
    /// Estimated position, or the last iterate when not converged.
    pub position: Option<DVector<f64>>,
    /// `p̂ - p` for converged trials.
    pub error: Option<DVector<f64>>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub batch: MeasurementBatch,
    pub truth: FullParams,
    /// Standard normal draw that sampled prior means are built from.
    pub velocity_noise: DVector<f64>,
    pub outcomes: Vec<EstimateOutcome>,
}

/// Generates trial `trial` and runs every estimator on the same batch.
pub fn run_trial(
    cfg: &ScenarioConfig,
    trial: usize,
    estimators: &[EstimatorSpec],
    solver: &SolverConfig,
) -> Result<TrialRecord> {
    let mut rng = trial_rng(cfg.seed, trial as u64);
    let fix_index = match cfg.motion {
        Motion::Fixed(_) => trial,
        Motion::RandomLinear { .. } => 0,
    };
    let (batch, truth) = synthesize_batch(cfg, fix_index, &mut rng)?;
    let velocity_noise = DVector::from_fn(truth.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let outcomes = estimators
        .iter()
        .map(
            |spec| match spec.solve(&batch, &cfg.bs, &truth, &velocity_noise, solver) {
                Ok(rep) => EstimateOutcome {
                    estimator: *spec,
                    converged: true,
                    iterations: rep.iterations,
                    error: Some(&rep.params.p - &truth.p),
                    position: Some(rep.params.p),
                    failure: None,
                },
                Err(err) => {
                    let (iterations, position) = match &err {
                        Error::NotConverged { iterations, last, .. } => {
                            (*iterations, Some(last.rows(0, truth.dim()).into_owned()))
                        }
                        _ => (0, None),
                    };
                    EstimateOutcome {
                        estimator: *spec,
                        converged: false,
                        iterations,
                        position,
                        error: None,
                        failure: Some(err.to_string()),
                    }
                }
            },
        )
        .collect();
    Ok(TrialRecord {
        trial,
        batch,
        truth,
        velocity_noise,
        outcomes,
    })
}

/// Runs `cfg.n_trials` independent trials on the current rayon pool.
///
/// Estimator failures are recorded per trial; only an invalid configuration
/// aborts the run.
pub fn run_monte_carlo(
    cfg: &ScenarioConfig,
    estimators: &[EstimatorSpec],
    solver: &SolverConfig,
) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    solver.validate()?;
    (0..cfg.n_trials)
        .into_par_iter()
        .map(|k| run_trial(cfg, k, estimators, solver))
        .collect()
}

/// Four base stations on the corners of an axis-aligned square with one
/// corner at the origin, listed counter-clockwise.
pub fn square_corners(side: f64) -> BsConstellation {
    BsConstellation::from_rows(&[[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]]).expect("square corners are valid")
}
