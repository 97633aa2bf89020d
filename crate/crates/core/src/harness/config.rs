use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineGains;
use crate::course::CostWeights;
use crate::error::{Error, Result};
use crate::l1::L1Config;
use crate::math::Mat3;
use crate::mppi::MppiConfig;
use crate::plant::NominalParams;

/// Nominal vehicle parameters as they appear in the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NominalConfig {
    pub mass: f64,
    pub inertia: [[f64; 3]; 3],
    pub thrust_power: f64,
    pub moment_power: [[f64; 3]; 3],
}

impl Default for NominalConfig {
    fn default() -> Self {
        Self {
            mass: 1.0,
            inertia: [[4.9e-3, 0.0, 0.0], [0.0, 4.9e-3, 0.0], [0.0, 0.0, 4.9e-3]],
            thrust_power: 1.0,
            moment_power: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }
}

fn mat3(rows: &[[f64; 3]; 3]) -> Mat3 {
    Mat3::from_fn(|i, j| rows[i][j])
}

impl NominalConfig {
    pub fn params(&self) -> Result<NominalParams> {
        NominalParams::new(
            self.mass,
            mat3(&self.inertia),
            self.thrust_power,
            mat3(&self.moment_power),
        )
    }
}

/// Loop rates and the run-time cap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub plant_hz: f64,
    pub l1_hz: f64,
    pub baseline_hz: f64,
    pub mppi_hz: f64,
    /// s
    pub duration_cap: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            plant_hz: 2000.0,
            l1_hz: 400.0,
            baseline_hz: 500.0,
            mppi_hz: 50.0,
            duration_cap: 120.0,
        }
    }
}

impl SchedulerConfig {
    pub fn plant_dt(&self) -> f64 {
        1.0 / self.plant_hz
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.l1_hz, self.baseline_hz, self.mppi_hz];
        if !(self.plant_hz > 0.0) || rates.iter().any(|&r| !(r > 0.0) || r > self.plant_hz) {
            return Err(Error::InvalidParameter(
                "scheduler rates must be positive and not exceed the plant rate".into(),
            ));
        }
        if !(self.duration_cap > 0.0) {
            return Err(Error::InvalidParameter("duration_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Failure thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureLimits {
    /// Divergence when the centerline distance exceeds this many corridor radii.
    pub divergence_radii: f64,
    /// m/s
    pub max_speed: f64,
    /// Ground plane height, m.
    pub ground: f64,
}

impl Default for FailureLimits {
    fn default() -> Self {
        Self {
            divergence_radii: 4.0,
            max_speed: 40.0,
            ground: 0.0,
        }
    }
}

/// Every tunable of the stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub nominal: NominalConfig,
    pub mppi: MppiConfig,
    pub baseline: BaselineGains,
    pub l1: L1Config,
    pub cost: CostWeights,
    pub scheduler: SchedulerConfig,
    pub limits: FailureLimits,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            nominal: NominalConfig::default(),
            mppi: MppiConfig::default(),
            baseline: BaselineGains::default(),
            l1: L1Config::default(),
            cost: CostWeights::default(),
            scheduler: SchedulerConfig::default(),
            limits: FailureLimits::default(),
        }
    }
}

impl Config {
    /// Defaults with the full sample count.
    pub fn faithful() -> Self {
        Self {
            mppi: MppiConfig::faithful(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.nominal.params()?;
        self.mppi.validate()?;
        self.baseline.validate()?;
        self.l1.validate()?;
        self.scheduler.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
