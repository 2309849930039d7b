//! Experiment configuration documents.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agents::{PpoConfig, Td3Config};
use crate::attack::{AttackCriticConfig, AttackSpec};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Oapi,
    Pi,
    OaTd3,
    Td3,
    OaPpo,
    Ppo,
}

impl AlgorithmName {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmName::Oapi => "oapi",
            AlgorithmName::Pi => "pi",
            AlgorithmName::OaTd3 => "oa_td3",
            AlgorithmName::Td3 => "td3",
            AlgorithmName::OaPpo => "oa_ppo",
            AlgorithmName::Ppo => "ppo",
        }
    }

    pub fn is_tabular(self) -> bool {
        matches!(self, AlgorithmName::Oapi | AlgorithmName::Pi)
    }
}

/// Settings of the exact tabular solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularConfig {
    /// Sup-norm tolerance of each policy evaluation.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for TabularConfig {
    fn default() -> Self {
        TabularConfig {
            tol: 1e-12,
            max_iters: 1000,
        }
    }
}

/// Algorithm block as written: a name plus that algorithm's settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmBlock {
    pub name: AlgorithmName,
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBlock {
    /// Training seeds; evaluation of a checkpoint reuses its training seed.
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    /// Evaluation episodes per seed and attack.
    pub episodes: usize,
    /// Budget of bench-trained attack critics.
    pub attack_critic: AttackCriticConfig,
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            seeds: vec![0],
            out: None,
            episodes: 10,
            attack_critic: AttackCriticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub algorithm: AlgorithmBlock,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub run: RunBlock,
}

/// Algorithm settings after defaults are filled in.
#[derive(Debug, Clone, PartialEq)]
pub enum AlgorithmSettings {
    Tabular(TabularConfig),
    Td3(Td3Config),
    Ppo(PpoConfig),
}

fn parse_at<T: DeserializeOwned>(value: &serde_json::Value, prefix: &str) -> Result<T> {
    let value = if value.is_null() {
        serde_json::Value::Object(Default::default())
    } else {
        value.clone()
    };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let at = if path == "." { prefix.to_string() } else { format!("{prefix}.{path}") };
        Error::Config(format!("{at}: {}", e.into_inner()))
    })
}

impl ExperimentConfig {
    /// Parse and validate; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.settings()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn settings(&self) -> Result<AlgorithmSettings> {
        let v = &self.algorithm.config;
        Ok(match self.algorithm.name {
            AlgorithmName::Oapi | AlgorithmName::Pi => AlgorithmSettings::Tabular(parse_at(v, "algorithm.config")?),
            AlgorithmName::OaTd3 | AlgorithmName::Td3 => AlgorithmSettings::Td3(parse_at(v, "algorithm.config")?),
            AlgorithmName::OaPpo | AlgorithmName::Ppo => AlgorithmSettings::Ppo(parse_at(v, "algorithm.config")?),
        })
    }

    fn validate(&self) -> Result<()> {
        match self.settings()? {
            AlgorithmSettings::Tabular(t) => {
                if self.env.tabular()?.is_none() {
                    return Err(Error::Config(format!(
                        "algorithm {} needs a tabular env, got {}",
                        self.algorithm.name.as_str(),
                        self.env.id()
                    )));
                }
                if !(t.tol > 0.0) || t.max_iters == 0 {
                    return Err(Error::Config("algorithm.config: tol and max_iters must be positive".into()));
                }
            }
            AlgorithmSettings::Td3(c) => c.validate()?,
            AlgorithmSettings::Ppo(c) => c.validate()?,
        }
        if !self.algorithm.name.is_tabular() && self.env.tabular()?.is_some() {
            return Err(Error::Config(format!(
                "algorithm {} needs a continuous env, got {}",
                self.algorithm.name.as_str(),
                self.env.id()
            )));
        }
        for (i, a) in self.attacks.iter().enumerate() {
            a.validate().map_err(|e| Error::Config(format!("attacks[{i}]: {e}")))?;
        }
        if self.run.seeds.is_empty() || self.run.episodes == 0 {
            return Err(Error::Config("run: seeds must be non-empty and episodes >= 1".into()));
        }
        let mut seeds = self.run.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.run.seeds.len() {
            return Err(Error::Config("run.seeds: duplicate seed".into()));
        }
        self.run.attack_critic.validate()?;
        Ok(())
    }

    /// Copy with `seed` replacing the seed list.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.run.seeds = vec![seed];
        c
    }

    /// Fully explicit document: every default written out.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        c.algorithm.config = match self.settings()? {
            AlgorithmSettings::Tabular(t) => serde_json::to_value(t)?,
            AlgorithmSettings::Td3(t) => serde_json::to_value(t)?,
            AlgorithmSettings::Ppo(t) => serde_json::to_value(t)?,
        };
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
