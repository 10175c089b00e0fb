//! Scenario documents: vehicle, environment, start distribution, guidance
//! mode and training settings in one JSON file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{GuidanceGains, TargetState, ZemZevStrategy};
use crate::policy::PolicyDocument;
use crate::sim::{Environment, LanderState, SpacecraftParams};
use crate::trainer::{CostWeights, InitialDistribution, Mission, SlopeContact, TrainConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GuidanceMode {
    #[default]
    Classical,
    GeneralizedFixed { k_r: f64, k_v: f64 },
    AdaptivePolicy { policy: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub spacecraft: SpacecraftParams,
    pub environment: Environment,
    pub target: TargetState,
    pub initial: InitialDistribution,
    pub guidance: GuidanceMode,
    pub strategy: ZemZevStrategy,
    /// Time of flight for the fixed-gain modes, s.
    pub tof: f64,
    pub n_steps: usize,
    pub weights: CostWeights,
    pub seed: u64,
    pub n_trials: usize,
    /// Write a policy checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
    pub train: TrainConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::mars_2d()
    }
}

impl ScenarioConfig {
    pub fn mars_2d() -> Self {
        Self {
            name: "mars_2d".into(),
            spacecraft: SpacecraftParams::default(),
            environment: Environment::default(),
            target: TargetState::default(),
            initial: InitialDistribution::mars_2d(),
            guidance: GuidanceMode::Classical,
            strategy: ZemZevStrategy::ConstantGravity,
            tof: 80.0,
            n_steps: 60,
            weights: CostWeights::default(),
            seed: 0,
            n_trials: 100,
            checkpoint_every: 10,
            train: TrainConfig::default(),
        }
    }

    pub fn mars_3d() -> Self {
        let initial = InitialDistribution::mars_3d();
        Self {
            name: "mars_3d".into(),
            initial,
            train: TrainConfig {
                initial,
                ..TrainConfig::default()
            },
            ..Self::mars_2d()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        // policy paths are relative to the config file
        if let GuidanceMode::AdaptivePolicy { policy } = &mut cfg.guidance {
            if policy.is_relative() {
                if let Some(dir) = path.parent() {
                    *policy = dir.join(&*policy);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.mission().validate()?;
        self.weights.validate()?;
        if !(self.tof > 0.0 && self.tof.is_finite()) {
            return Err(Error::InvalidParameter(format!("tof must be positive, got {}", self.tof)));
        }
        if let GuidanceMode::GeneralizedFixed { k_r, k_v } = self.guidance {
            GuidanceGains::new(k_r, k_v, self.tof).validate()?;
        }
        Ok(())
    }

    pub fn mission(&self) -> Mission {
        Mission {
            spacecraft: self.spacecraft.clone(),
            environment: self.environment.clone(),
            target: self.target,
            weights: self.weights,
            strategy: self.strategy,
            n_steps: self.n_steps,
            slope_contact: SlopeContact::Terminate,
        }
    }

    /// Training settings with the scenario's start distribution and seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            initial: self.initial,
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn nominal_start(&self) -> LanderState {
        self.initial.nominal(self.spacecraft.m_wet)
    }

    /// Load and check the policy named by an adaptive-mode scenario.
    pub fn load_policy(&self) -> Result<Option<PolicyDocument>> {
        match &self.guidance {
            GuidanceMode::AdaptivePolicy { policy } => Ok(Some(PolicyDocument::load(policy)?)),
            _ => Ok(None),
        }
    }

    pub fn fixed_gains(&self) -> Option<GuidanceGains> {
        match self.guidance {
            GuidanceMode::Classical => Some(GuidanceGains::classical(self.tof)),
            GuidanceMode::GeneralizedFixed { k_r, k_v } => Some(GuidanceGains::new(k_r, k_v, self.tof)),
            GuidanceMode::AdaptivePolicy { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for cfg in [ScenarioConfig::mars_2d(), ScenarioConfig::mars_3d()] {
            let text = cfg.to_json().unwrap();
            assert_eq!(ScenarioConfig::from_json(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = ScenarioConfig::from_json(r#"{"seed": 3, "guidance": {"mode": "generalized_fixed", "k_r": 5.0, "k_v": -1.5}}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.fixed_gains(), Some(GuidanceGains::new(5.0, -1.5, 80.0)));
        assert_eq!(cfg.spacecraft, SpacecraftParams::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ScenarioConfig::from_json(r#"{"tof": -1.0}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"unknown_key": 1}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"weights": {"b_i": 1.0, "b_f": 10.0}}"#).is_err());
    }
}
