//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bus::LinkModel;
use crate::coordinator::{TrainerKind, TrainingConfig};
use crate::env::drone::ObsRange;
use crate::env::{DroneConfig, EdgeConfig};
use crate::error::{Error, Result};
use crate::evaluation::AttackConfig;
use crate::privacy::PrivacyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentConfig {
    Drone(DroneConfig),
    Edge(EdgeConfig),
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig::Drone(DroneConfig::default())
    }
}

impl EnvironmentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvironmentConfig::Drone(_) => "drone",
            EnvironmentConfig::Edge(_) => "edge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryLog {
    None,
    /// Evaluation episodes only.
    #[default]
    Eval,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Harvest public views and the private dump, then run the inference attack.
    pub attack: bool,
    pub accounting: bool,
    /// Write every bus record to `bus.jsonl`.
    pub bus_log: bool,
    pub trajectory: TrajectoryLog,
    /// Noise-free episodes after training.
    pub eval_episodes: usize,
    pub attacker: AttackConfig,
    pub link: LinkModel,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            attack: false,
            accounting: true,
            bus_log: true,
            trajectory: TrajectoryLog::Eval,
            eval_episodes: 20,
            attacker: AttackConfig::default(),
            link: LinkModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub episodes: usize,
    /// Parent of the run directory.
    pub output_dir: PathBuf,
    /// Run directory name; derived from environment, trainer and seed when absent.
    pub name: Option<String>,
    /// Episodes between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            episodes: 100,
            output_dir: PathBuf::from("runs"),
            name: None,
            checkpoint_every: 0,
        }
    }
}

/// Grid of child runs; each present axis multiplies the grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_range: Option<Vec<ObsRange>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<Vec<TrainerKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<Vec<u64>>,
}

pub const SWEEP_AXES: [&str; 3] = ["obs_range", "trainer", "seed"];

impl SweepConfig {
    pub fn is_empty(&self) -> bool {
        self.obs_range.is_none() && self.trainer.is_none() && self.seed.is_none()
    }

    /// Sets one axis from command-line strings.
    pub fn set_axis(&mut self, axis: &str, values: &[String]) -> Result<()> {
        if values.is_empty() {
            return Err(Error::Config(format!("sweep axis {axis} has no values")));
        }
        let quoted = |v: &String| toml::Value::String(v.clone());
        match axis {
            "obs_range" => {
                let parsed = values
                    .iter()
                    .map(|v| match v.parse::<f64>() {
                        Ok(m) => Ok(ObsRange::Meters(m)),
                        Err(_) => quoted(v)
                            .try_into::<ObsRange>()
                            .map_err(|_| Error::Config(format!("bad obs_range value {v:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.obs_range = Some(parsed);
            }
            "trainer" => {
                let parsed = values
                    .iter()
                    .map(|v| quoted(v).try_into::<TrainerKind>().map_err(|_| Error::Config(format!("bad trainer {v:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                self.trainer = Some(parsed);
            }
            "seed" => {
                let parsed = values
                    .iter()
                    .map(|v| v.parse::<u64>().map_err(|_| Error::Config(format!("bad seed {v:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                self.seed = Some(parsed);
            }
            other => {
                return Err(Error::Config(format!(
                    "{other} is not sweepable; choose one of {}",
                    SWEEP_AXES.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("obs_range", self.obs_range.as_ref().map(Vec::len)),
            ("trainer", self.trainer.as_ref().map(Vec::len)),
            ("seed", self.seed.as_ref().map(Vec::len)),
        ];
        for (name, len) in empty {
            if len == Some(0) {
                return Err(Error::Config(format!("sweep axis {name} has no values")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub trainer: TrainingConfig,
    #[serde(default)]
    pub privacy: PrivacyConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "SweepConfig::is_empty")]
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Canonical serialization embedded in run directories.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn n_agents(&self) -> usize {
        match &self.environment {
            EnvironmentConfig::Drone(d) => d.n_drones,
            EnvironmentConfig::Edge(e) => e.n_controllers(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.environment {
            EnvironmentConfig::Drone(d) => d.validate()?,
            EnvironmentConfig::Edge(e) => e.validate()?,
        }
        self.trainer.validate(self.n_agents())?;
        self.privacy.validate()?;
        if self.trainer.trainer != TrainerKind::PpMarl && !self.privacy.is_none() {
            return Err(Error::Config(format!(
                "privacy.kind = {} applies to pp_marl only",
                self.privacy.name()
            )));
        }
        self.sweep.validate()?;
        if let (Some(_), EnvironmentConfig::Edge(_)) = (&self.sweep.obs_range, &self.environment) {
            return Err(Error::Config("obs_range sweeps need the drone environment".into()));
        }
        Ok(())
    }

    /// Scheme label used in reports, e.g. `pp_marl`, `pp_marl+dp`.
    pub fn scheme(&self) -> String {
        match self.trainer.trainer {
            TrainerKind::PpMarl if !self.privacy.is_none() => format!("pp_marl+{}", self.privacy.name()),
            k => k.name().to_string(),
        }
    }

    pub fn default_run_name(&self) -> String {
        format!("{}-{}-s{}", self.environment.name(), self.scheme(), self.run.seed)
    }
}
