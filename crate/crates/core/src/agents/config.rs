use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// OA-TD3 / TD3 settings. Defaults are the desk-scale ones; the benchmark
/// values (buffer 1e6, batch 256, 2x256 networks) remain reachable by config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Config {
    /// Perturbation budget the OA critic is trained against.
    pub epsilon: f64,
    /// Weight of the nominal critic in the actor objective.
    pub omega: f64,
    pub pgd_steps: usize,
    /// PGD step size; `epsilon / pgd_steps` when absent.
    pub pgd_step_size: Option<f64>,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub policy_delay: usize,
    pub exploration_noise: f64,
    pub smoothing_noise: f64,
    pub smoothing_clip: f64,
    pub learning_starts: usize,
    /// Critic-only updates after `learning_starts` before the actor first moves.
    pub actor_warmup: usize,
    pub total_steps: usize,
    pub buffer_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    /// Multiplier applied to rewards before they enter the replay buffer.
    pub reward_scale: f64,
    pub gradient_surgery: bool,
    pub seed: u64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Td3Config {
            epsilon: 0.2,
            omega: 0.5,
            pgd_steps: 16,
            pgd_step_size: None,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 100,
            policy_delay: 2,
            exploration_noise: 0.1,
            smoothing_noise: 0.2,
            smoothing_clip: 0.5,
            learning_starts: 5000,
            actor_warmup: 2000,
            total_steps: 30_000,
            buffer_size: 100_000,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            hidden: vec![64, 64],
            reward_scale: 1.0,
            gradient_surgery: true,
            seed: 0,
        }
    }
}

impl Td3Config {
    pub fn eta(&self) -> f64 {
        self.pgd_step_size
            .unwrap_or(self.epsilon / self.pgd_steps.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return bad("omega must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.pgd_steps == 0 {
            return bad("pgd_steps must be >= 1");
        }
        if self.epsilon > 0.0 && !(self.eta() > 0.0) {
            return bad("pgd_step_size must be > 0");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.policy_delay == 0 || self.buffer_size == 0 {
            return bad("batch_size, policy_delay and buffer_size must be positive");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive");
        }
        Ok(())
    }
}

/// OA-PPO / PPO settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub epsilon: f64,
    pub omega: f64,
    pub pgd_steps: usize,
    pub pgd_step_size: Option<f64>,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub rollout_steps: usize,
    pub minibatches: usize,
    pub update_epochs: usize,
    pub surrogate_clip: f64,
    pub max_grad_norm: f64,
    pub learning_rate: f64,
    pub lr_decay: bool,
    /// Soft update rate of the OA critic's target copy.
    pub tau: f64,
    pub initial_log_std: f64,
    pub total_steps: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            epsilon: 0.2,
            omega: 0.5,
            pgd_steps: 16,
            pgd_step_size: None,
            gamma: 0.99,
            gae_lambda: 0.95,
            rollout_steps: 2048,
            minibatches: 32,
            update_epochs: 10,
            surrogate_clip: 0.2,
            max_grad_norm: 0.5,
            learning_rate: 3e-4,
            lr_decay: true,
            tau: 0.005,
            initial_log_std: -0.5,
            total_steps: 50_000,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn eta(&self) -> f64 {
        self.pgd_step_size
            .unwrap_or(self.epsilon / self.pgd_steps.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return bad("omega must lie in [0, 1]");
        }
        if !(self.surrogate_clip > 0.0 && self.surrogate_clip < 1.0) {
            return bad("surrogate_clip must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.pgd_steps == 0 {
            return bad("pgd_steps must be >= 1");
        }
        if self.rollout_steps == 0 || self.minibatches == 0 || self.update_epochs == 0 {
            return bad("rollout_steps, minibatches and update_epochs must be positive");
        }
        if self.minibatches > self.rollout_steps {
            return bad("more minibatches than rollout steps");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}
