//! Versioned checkpoints of trained policies.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::AlgorithmName;
use crate::agents::GaussianFragment;
use crate::attack::Policy;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::mdp::TabularPolicy;
use crate::nn::{DenseNet, NetFragment};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payload {
    Tabular {
        policy: TabularPolicy,
        /// `Q^pi` for vanilla PI, `Q_adv^pi` for OA-PI.
        q: Vec<Vec<f64>>,
    },
    Td3 {
        actor: NetFragment,
        q1: NetFragment,
        q_adv: Option<NetFragment>,
    },
    Ppo {
        policy: GaussianFragment,
        value: NetFragment,
        q_adv: Option<NetFragment>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub algorithm: AlgorithmName,
    pub env_id: String,
    pub env: EnvSpec,
    pub epsilon: f64,
    pub omega: Option<f64>,
    pub seed: u64,
    /// Environment steps for deep agents, policy-iteration sweeps for tabular ones.
    pub step: usize,
    pub payload: Payload,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    /// Parse, refusing other format versions before looking at anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let found = raw
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Config("checkpoint has no numeric `version`".into()))?;
        if found != CHECKPOINT_VERSION as u64 {
            return Err(Error::CheckpointVersion {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(serde_json::from_value(raw)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The policy to evaluate.
    pub fn policy(&self) -> Result<Policy> {
        Ok(match &self.payload {
            Payload::Tabular { policy, .. } => Policy::Tabular {
                mdp: self
                    .env
                    .tabular()?
                    .ok_or_else(|| Error::Config(format!("tabular checkpoint for non-tabular env {}", self.env_id)))?,
                policy: policy.clone(),
            },
            Payload::Td3 { actor, .. } => Policy::Actor(DenseNet::from_fragment(actor)?),
            Payload::Ppo { policy, .. } => Policy::Gaussian(crate::agents::GaussianPolicy::from_fragment(policy)?),
        })
    }
}
