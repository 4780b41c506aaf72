//! The six Monte Carlo studies and their result tables.

use std::fmt;

use anyhow::{bail, ensure};
use clap::ValueEnum;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use seqloc::analysis::{bias_deviated_velocity, bias_lspm_d, theoretical_rmse};
use seqloc::estimators::SolverConfig;
use seqloc::model::{BsConstellation, FullParams, MeasurementBatch, Variant, VelocityPrior};
use seqloc::simulator::{
    run_monte_carlo, square_corners, ClockModel, EstimatorSpec, Motion, NoiseModel, PriorMean, ScenarioConfig,
    TdmaSchedule, Trajectory, TrialRecord,
};

use crate::stats::{empirical_rmse, error_cdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    /// Position error vs noise, stationary device (KVD and LSPM-D).
    StationaryNoise,
    /// Position error vs speed (KVD and LSPM-D).
    SpeedSweep,
    /// KVD error vs error in the assumed speed.
    VelocityDeviation,
    /// UVD and PVD error vs noise at 5 m/s.
    NoiseSweepUvdPvd,
    /// KVD, PVD and UVD vs speed.
    SpeedCompare,
    /// All four estimators along a circle in a 100 m square.
    Circular,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 6] = [
        ExperimentName::StationaryNoise,
        ExperimentName::SpeedSweep,
        ExperimentName::VelocityDeviation,
        ExperimentName::NoiseSweepUvdPvd,
        ExperimentName::SpeedCompare,
        ExperimentName::Circular,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::StationaryNoise => "stationary-noise",
            ExperimentName::SpeedSweep => "speed-sweep",
            ExperimentName::VelocityDeviation => "velocity-deviation",
            ExperimentName::NoiseSweepUvdPvd => "noise-sweep-uvd-pvd",
            ExperimentName::SpeedCompare => "speed-compare",
            ExperimentName::Circular => "circular",
        }
    }

    /// What the grid values stand for.
    pub fn sweep(self) -> Sweep {
        match self {
            ExperimentName::StationaryNoise | ExperimentName::NoiseSweepUvdPvd => Sweep::Noise,
            ExperimentName::SpeedSweep | ExperimentName::SpeedCompare => Sweep::Speed,
            ExperimentName::VelocityDeviation => Sweep::Deviation,
            ExperimentName::Circular => Sweep::Single,
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// Uniform noise standard deviation, m.
    Noise,
    /// Device speed, m/s.
    Speed,
    /// Error added to the speed handed to the KVD, m/s.
    Deviation,
    /// One operating point; the grid value is only a label.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    Kvd,
    /// KVD given the swept speed error.
    KvdDeviated,
    Pvd,
    Uvd,
    LspmD,
}

impl EstimatorChoice {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorChoice::Kvd => "kvd",
            EstimatorChoice::KvdDeviated => "kvd-deviated",
            EstimatorChoice::Pvd => "pvd",
            EstimatorChoice::Uvd => "uvd",
            EstimatorChoice::LspmD => "lspm-d",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub grid: Vec<f64>,
    pub estimators: Vec<EstimatorChoice>,
    pub prior_std: f64,
    pub prior_mean: PriorMean,
    /// Circular run length in seconds; sets the trial count unless the
    /// config gives one.
    pub duration: Option<f64>,
}

/// `count` points log-spaced from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64))
        .collect()
}

impl ExperimentSpec {
    pub fn defaults(name: ExperimentName) -> Self {
        use EstimatorChoice::*;
        let noise = log_grid(0.01, 1.0, 9);
        let (grid, estimators) = match name {
            ExperimentName::StationaryNoise => (noise, vec![Kvd, LspmD]),
            ExperimentName::SpeedSweep => (vec![0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 15.0, 20.0], vec![Kvd, LspmD]),
            ExperimentName::VelocityDeviation => (vec![0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0], vec![Kvd, KvdDeviated]),
            ExperimentName::NoiseSweepUvdPvd => (noise, vec![Uvd, Pvd]),
            ExperimentName::SpeedCompare => (vec![0.0, 1.0, 2.0, 5.0, 10.0, 15.0, 20.0], vec![Kvd, Pvd, Uvd]),
            ExperimentName::Circular => (vec![10.0], vec![Kvd, Pvd, Uvd, LspmD]),
        };
        ExperimentSpec {
            name,
            grid,
            estimators,
            prior_std: 2.0,
            prior_mean: PriorMean::Sampled,
            duration: (name == ExperimentName::Circular).then_some(360.0),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(!self.grid.is_empty(), "{}: sweep grid is empty", self.name);
        ensure!(
            self.grid.iter().all(|x| x.is_finite()),
            "{}: sweep grid has non-finite values",
            self.name
        );
        ensure!(
            self.grid.windows(2).all(|w| w[0] < w[1]),
            "{}: sweep grid must be strictly increasing",
            self.name
        );
        match self.name.sweep() {
            Sweep::Noise => ensure!(self.grid[0] > 0.0, "noise levels must be positive"),
            Sweep::Speed => ensure!(self.grid[0] >= 0.0, "speeds must be non-negative"),
            Sweep::Single => ensure!(self.grid.len() == 1, "{} has a single operating point", self.name),
            Sweep::Deviation => {}
        }
        ensure!(!self.estimators.is_empty(), "{}: no estimators selected", self.name);
        ensure!(
            self.prior_std > 0.0 && self.prior_std.is_finite(),
            "prior standard deviation must be positive"
        );
        if let Some(d) = self.duration {
            ensure!(d > 0.0 && d.is_finite(), "duration must be positive");
        }
        Ok(())
    }

    fn estimator(&self, choice: EstimatorChoice, value: f64) -> EstimatorSpec {
        match choice {
            EstimatorChoice::Kvd => EstimatorSpec::KVD,
            EstimatorChoice::KvdDeviated => EstimatorSpec::Kvd {
                deviation: if self.name.sweep() == Sweep::Deviation {
                    value
                } else {
                    0.0
                },
            },
            EstimatorChoice::Pvd => EstimatorSpec::Pvd {
                prior_std: self.prior_std,
                prior_mean: self.prior_mean,
            },
            EstimatorChoice::Uvd => EstimatorSpec::Uvd,
            EstimatorChoice::LspmD => EstimatorSpec::LspmD,
        }
    }
}

/// Scenario each experiment runs on before any config overrides.
pub fn default_scenario(name: ExperimentName) -> ScenarioConfig {
    let inner = |speed: f64| Motion::RandomLinear {
        center: DVector::from_vec(vec![15.0, 15.0]),
        side: 10.0,
        speed,
    };
    let base = ScenarioConfig {
        bs: square_corners(30.0),
        motion: inner(5.0),
        clock: ClockModel::default(),
        schedule: TdmaSchedule::round_robin(4),
        m_per_fix: 8,
        epoch_index: 0,
        noise: NoiseModel::Uniform(0.1),
        seed: 1,
        n_trials: 1000,
    };
    match name {
        ExperimentName::StationaryNoise => ScenarioConfig {
            motion: inner(0.0),
            ..base
        },
        ExperimentName::Circular => ScenarioConfig {
            bs: square_corners(100.0),
            motion: Motion::Fixed(Trajectory::Circular {
                center: DVector::from_vec(vec![50.0, 50.0]),
                radius: 30.0,
                angular_rate: 1.0 / 3.0,
                phase: 0.0,
            }),
            // Epoch at the second measurement of each window.
            epoch_index: 1,
            n_trials: 4500,
            ..base
        },
        _ => base,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub estimator: String,
    pub empirical_rmse: f64,
    pub theoretical_rmse: f64,
    pub crlb_rmse: f64,
    pub trials: usize,
    pub non_converged: usize,
    /// Standard error of `empirical_rmse`; not written to the CSV.
    pub empirical_se: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn get(&self, sweep_value: f64, estimator: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.sweep_value == sweep_value && r.estimator == estimator)
    }

    /// Rows of one estimator in grid order.
    pub fn series(&self, estimator: &str) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.estimator == estimator).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisRow {
    pub estimator: String,
    pub per_axis: Vec<f64>,
    pub rmse: f64,
    pub fixes: usize,
    pub non_converged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircularSummary {
    pub rows: Vec<AxisRow>,
    /// Per estimator, the CDF of the position error norm.
    pub cdf: Vec<(String, Vec<(f64, f64)>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub spec: ExperimentSpec,
    pub scenario: ScenarioConfig,
    pub table: ResultTable,
    pub circular: Option<CircularSummary>,
}

/// Scenario for one sweep point.
fn scenario_at(name: ExperimentName, base: &ScenarioConfig, value: f64) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = base.clone();
    match name.sweep() {
        Sweep::Noise => cfg.noise = NoiseModel::Uniform(value),
        Sweep::Speed => match &mut cfg.motion {
            Motion::RandomLinear { speed, .. } => *speed = value,
            _ => bail!("{name} sweeps the speed and needs a random_linear trajectory"),
        },
        Sweep::Deviation | Sweep::Single => {}
    }
    Ok(cfg)
}

fn velocity_prior(spec: &ExperimentSpec, truth: &FullParams) -> VelocityPrior {
    VelocityPrior::isotropic(truth.v.clone(), spec.prior_std).expect("validated prior")
}

/// Theoretical and bound mean squared position errors of one estimator on
/// one trial, at the true parameters.
fn theory_mse(
    est: &EstimatorSpec,
    spec: &ExperimentSpec,
    batch: &MeasurementBatch,
    bs: &BsConstellation,
    truth: &FullParams,
) -> seqloc::Result<(f64, f64)> {
    let n = truth.dim();
    match est {
        EstimatorSpec::Kvd { deviation } => {
            let bound = theoretical_rmse(Variant::Kvd, batch, bs, truth, None)?.mse();
            let theory = if *deviation == 0.0 {
                bound
            } else {
                bias_deviated_velocity(batch, bs, truth, &est.known_velocity(truth))?.mse()
            };
            Ok((theory, bound))
        }
        EstimatorSpec::LspmD => {
            let theory = bias_lspm_d(batch, bs, truth)?.mse();
            // Bound of the drift-only model, which takes the device as static.
            let still = truth.kvd().with_velocity(DVector::zeros(n));
            let bound = theoretical_rmse(Variant::Kvd, batch, bs, &still, None)?.mse();
            Ok((theory, bound))
        }
        EstimatorSpec::Uvd => {
            let m = theoretical_rmse(Variant::Uvd, batch, bs, truth, None)?.mse();
            Ok((m, m))
        }
        EstimatorSpec::Pvd { .. } => {
            let prior = velocity_prior(spec, truth);
            let m = theoretical_rmse(Variant::Pvd, batch, bs, truth, Some(&prior))?.mse();
            Ok((m, m))
        }
    }
}

fn summarize(
    spec: &ExperimentSpec,
    cfg: &ScenarioConfig,
    value: f64,
    label: &str,
    k: usize,
    est: &EstimatorSpec,
    records: &[TrialRecord],
) -> ResultRow {
    let mut errors = Vec::new();
    let (mut theory, mut bound, mut theory_count) = (0.0, 0.0, 0usize);
    for r in records {
        let Some(e) = &r.outcomes[k].error else {
            continue;
        };
        errors.push(e.clone());
        if let Ok((t, b)) = theory_mse(est, spec, &r.batch, &cfg.bs, &r.truth) {
            theory += t;
            bound += b;
            theory_count += 1;
        }
    }
    let emp = empirical_rmse(&errors).ok();
    let mean_root = |s: f64| {
        if theory_count == 0 {
            f64::NAN
        } else {
            (s / theory_count as f64).sqrt()
        }
    };
    ResultRow {
        sweep_value: value,
        estimator: label.to_string(),
        empirical_rmse: emp.as_ref().map_or(f64::NAN, |s| s.rmse),
        theoretical_rmse: mean_root(theory),
        crlb_rmse: mean_root(bound),
        trials: records.len(),
        non_converged: records.len() - errors.len(),
        empirical_se: emp.as_ref().map_or(f64::NAN, |s| s.std_error),
    }
}

fn circular_summary(spec: &ExperimentSpec, records: &[TrialRecord]) -> anyhow::Result<CircularSummary> {
    let mut rows = Vec::new();
    let mut cdf = Vec::new();
    for (k, choice) in spec.estimators.iter().enumerate() {
        let errors: Vec<DVector<f64>> = records.iter().filter_map(|r| r.outcomes[k].error.clone()).collect();
        if errors.is_empty() {
            bail!("{}: no converged fixes", choice.label());
        }
        let s = empirical_rmse(&errors)?;
        let norms: Vec<f64> = errors.iter().map(|e| e.norm()).collect();
        rows.push(AxisRow {
            estimator: choice.label().to_string(),
            per_axis: s.per_axis,
            rmse: s.rmse,
            fixes: records.len(),
            non_converged: records.len() - errors.len(),
        });
        cdf.push((choice.label().to_string(), error_cdf(&norms)?));
    }
    Ok(CircularSummary { rows, cdf })
}

/// Runs every sweep point of `spec` on `base` in the current rayon pool.
pub fn run_experiment(spec: &ExperimentSpec, base: &ScenarioConfig) -> anyhow::Result<ExperimentOutput> {
    spec.validate()?;
    base.validate()?;
    let solver = SolverConfig::default();
    let mut table = ResultTable::default();
    let mut circular = None;
    for &value in &spec.grid {
        let cfg = scenario_at(spec.name, base, value)?;
        let ests: Vec<EstimatorSpec> = spec.estimators.iter().map(|c| spec.estimator(*c, value)).collect();
        let records = run_monte_carlo(&cfg, &ests, &solver)?;
        for (k, (choice, est)) in spec.estimators.iter().zip(&ests).enumerate() {
            table
                .rows
                .push(summarize(spec, &cfg, value, choice.label(), k, est, &records));
        }
        if spec.name == ExperimentName::Circular {
            circular = Some(circular_summary(spec, &records)?);
        }
    }
    Ok(ExperimentOutput {
        spec: spec.clone(),
        scenario: base.clone(),
        table,
        circular,
    })
}

/// Scenario and spec for `name` with an optional config file, seed and
/// trial count applied in that order.
pub fn resolve(
    name: ExperimentName,
    file: Option<&crate::config::ConfigFile>,
    seed: Option<u64>,
    trials: Option<usize>,
) -> anyhow::Result<(ExperimentSpec, ScenarioConfig)> {
    let default_file = crate::config::ConfigFile::default();
    let file = file.unwrap_or(&default_file);
    let spec = file.experiment(&ExperimentSpec::defaults(name))?;
    let mut cfg = file.scenario(&default_scenario(name))?;
    if let (Some(duration), None, None) = (spec.duration, file.trials, trials) {
        cfg.n_trials = cfg.fixes_in(duration);
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(trials) = trials {
        cfg.n_trials = trials;
    }
    cfg.validate()?;
    Ok((spec, cfg))
}
