//! JSON scenario files.
//!
//! Every top-level key is optional; missing ones fall back to the defaults of
//! the selected experiment. Unknown keys are rejected.

use std::path::Path;

use anyhow::{bail, Context};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use seqloc::model::BsConstellation;
use seqloc::simulator::{ClockModel, Motion, NoiseModel, PriorMean, ScenarioConfig, Trajectory};

use crate::experiments::{EstimatorChoice, ExperimentName, ExperimentSpec};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bs: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectoryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock: Option<ClockConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryConfig {
    Stationary {
        position: Vec<f64>,
    },
    ConstantVelocity {
        position: Vec<f64>,
        velocity: Vec<f64>,
        #[serde(default)]
        t_ref: f64,
    },
    Circular {
        center: Vec<f64>,
        radius: f64,
        angular_rate: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Fresh uniform placement and heading every trial.
    RandomLinear {
        center: Vec<f64>,
        side: f64,
        speed: f64,
    },
}

/// Drift is given either in range units (`drift`, m/s) or as `drift_ppm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockConfig {
    #[serde(default = "default_b0")]
    pub b0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_ppm: Option<f64>,
    #[serde(default)]
    pub t_ref: f64,
}

fn default_b0() -> f64 {
    ClockModel::default().b0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_interval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bs_order: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_per_fix: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_index: Option<usize>,
}

/// A single standard deviation for every station, or one per station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseConfig {
    Uniform(f64),
    PerBs(Vec<f64>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<ExperimentName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<EstimatorChoice>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_mean: Option<PriorMeanConfig>,
    /// Simulated time span of the circular run, seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMeanConfig {
    Truth,
    Sampled,
}

impl From<PriorMeanConfig> for PriorMean {
    fn from(p: PriorMeanConfig) -> Self {
        match p {
            PriorMeanConfig::Truth => PriorMean::Truth,
            PriorMeanConfig::Sampled => PriorMean::Sampled,
        }
    }
}

impl From<PriorMean> for PriorMeanConfig {
    fn from(p: PriorMean) -> Self {
        match p {
            PriorMean::Truth => PriorMeanConfig::Truth,
            PriorMean::Sampled => PriorMeanConfig::Sampled,
        }
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Applies this file on top of `base`.
    pub fn scenario(&self, base: &ScenarioConfig) -> anyhow::Result<ScenarioConfig> {
        let mut cfg = base.clone();
        if let Some(rows) = &self.bs {
            cfg.bs = BsConstellation::new(rows.iter().map(|r| DVector::from_column_slice(r)).collect())?;
            if self.schedule.as_ref().and_then(|s| s.bs_order.as_ref()).is_none() {
                cfg.schedule.bs_order = (0..cfg.bs.len()).collect();
            }
        }
        if let Some(t) = &self.trajectory {
            cfg.motion = t.to_motion();
        }
        if let Some(c) = &self.clock {
            cfg.clock = c.to_clock()?;
        }
        if let Some(s) = &self.schedule {
            if let Some(x) = s.slot_interval {
                cfg.schedule.slot_interval = x;
            }
            if let Some(x) = &s.bs_order {
                cfg.schedule.bs_order = x.clone();
            }
            if let Some(x) = s.start_time {
                cfg.schedule.start_time = x;
            }
            if let Some(x) = s.m_per_fix {
                cfg.m_per_fix = x;
            }
            if let Some(x) = s.epoch_index {
                cfg.epoch_index = x;
            }
        }
        if let Some(n) = &self.noise {
            cfg.noise = match n {
                NoiseConfig::Uniform(s) => NoiseModel::Uniform(*s),
                NoiseConfig::PerBs(s) => NoiseModel::PerBs(s.clone()),
            };
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.n_trials = trials;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the `experiment` section on top of `base`.
    pub fn experiment(&self, base: &ExperimentSpec) -> anyhow::Result<ExperimentSpec> {
        let mut spec = base.clone();
        if let Some(e) = &self.experiment {
            if let Some(name) = e.name {
                if name != spec.name {
                    bail!("config is for experiment {name}, running {}", spec.name);
                }
            }
            if let Some(g) = &e.grid {
                spec.grid = g.clone();
            }
            if let Some(est) = &e.estimators {
                spec.estimators = est.clone();
            }
            if let Some(s) = e.prior_std {
                spec.prior_std = s;
            }
            if let Some(m) = e.prior_mean {
                spec.prior_mean = m.into();
            }
            if let Some(d) = e.duration {
                spec.duration = Some(d);
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// The file that reproduces `cfg` and `spec` exactly.
    pub fn describe(cfg: &ScenarioConfig, spec: Option<&ExperimentSpec>) -> Self {
        let noise = match &cfg.noise {
            NoiseModel::Uniform(s) => NoiseConfig::Uniform(*s),
            NoiseModel::PerBs(s) => NoiseConfig::PerBs(s.clone()),
        };
        ConfigFile {
            bs: Some(cfg.bs.positions().iter().map(|p| p.iter().copied().collect()).collect()),
            trajectory: Some(TrajectoryConfig::from_motion(&cfg.motion)),
            clock: Some(ClockConfig {
                b0: cfg.clock.b0,
                drift: Some(cfg.clock.drift),
                drift_ppm: None,
                t_ref: cfg.clock.t_ref,
            }),
            schedule: Some(ScheduleConfig {
                slot_interval: Some(cfg.schedule.slot_interval),
                bs_order: Some(cfg.schedule.bs_order.clone()),
                start_time: Some(cfg.schedule.start_time),
                m_per_fix: Some(cfg.m_per_fix),
                epoch_index: Some(cfg.epoch_index),
            }),
            noise: Some(noise),
            seed: Some(cfg.seed),
            trials: Some(cfg.n_trials),
            experiment: spec.map(|s| ExperimentConfig {
                name: Some(s.name),
                grid: Some(s.grid.clone()),
                estimators: Some(s.estimators.clone()),
                prior_std: Some(s.prior_std),
                prior_mean: Some(s.prior_mean.into()),
                duration: s.duration,
            }),
        }
    }
}

impl TrajectoryConfig {
    pub fn to_motion(&self) -> Motion {
        let v = |x: &Vec<f64>| DVector::from_column_slice(x);
        match self {
            TrajectoryConfig::Stationary { position } => {
                Motion::Fixed(Trajectory::Stationary { position: v(position) })
            }
            TrajectoryConfig::ConstantVelocity {
                position,
                velocity,
                t_ref,
            } => Motion::Fixed(Trajectory::ConstantVelocity {
                position: v(position),
                t_ref: *t_ref,
                velocity: v(velocity),
            }),
            TrajectoryConfig::Circular {
                center,
                radius,
                angular_rate,
                phase,
            } => Motion::Fixed(Trajectory::Circular {
                center: v(center),
                radius: *radius,
                angular_rate: *angular_rate,
                phase: *phase,
            }),
            TrajectoryConfig::RandomLinear { center, side, speed } => Motion::RandomLinear {
                center: v(center),
                side: *side,
                speed: *speed,
            },
        }
    }

    pub fn from_motion(motion: &Motion) -> Self {
        let v = |x: &DVector<f64>| x.iter().copied().collect::<Vec<_>>();
        match motion {
            Motion::Fixed(Trajectory::Stationary { position }) => {
                TrajectoryConfig::Stationary { position: v(position) }
            }
            Motion::Fixed(Trajectory::ConstantVelocity {
                position,
                t_ref,
                velocity,
            }) => TrajectoryConfig::ConstantVelocity {
                position: v(position),
                velocity: v(velocity),
                t_ref: *t_ref,
            },
            Motion::Fixed(Trajectory::Circular {
                center,
                radius,
                angular_rate,
                phase,
            }) => TrajectoryConfig::Circular {
                center: v(center),
                radius: *radius,
                angular_rate: *angular_rate,
                phase: *phase,
            },
            Motion::RandomLinear { center, side, speed } => TrajectoryConfig::RandomLinear {
                center: v(center),
                side: *side,
                speed: *speed,
            },
        }
    }
}

impl ClockConfig {
    pub fn to_clock(&self) -> anyhow::Result<ClockModel> {
        match (self.drift, self.drift_ppm) {
            (Some(_), Some(_)) => bail!("clock: give either drift or drift_ppm, not both"),
            (Some(d), None) => Ok(ClockModel {
                b0: self.b0,
                drift: d,
                t_ref: self.t_ref,
            }),
            (None, Some(ppm)) => Ok(ClockModel::from_ppm(self.b0, ppm, self.t_ref)),
            (None, None) => Ok(ClockModel {
                b0: self.b0,
                t_ref: self.t_ref,
                ..ClockModel::default()
            }),
        }
    }
}
