//! Dedicated critics for gradient attacks on a frozen continuous policy.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Policy;
use crate::agents::{
    critic_input, critic_net, optimizer, pgd_min_delta, pgd_min_delta_batch, regress, stream, Batch, ReplayBuffer,
    Transition,
};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::nn::{DenseNet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticMode {
    /// `Q^mu`: plain TD targets, exploration noise.
    Standard,
    /// `Q_adv^mu`: worst-case targets, exploration by the critic's own perturbation.
    Oa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackCriticConfig {
    pub total_steps: usize,
    pub learning_starts: usize,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Gaussian noise on actions in standard mode.
    pub exploration_noise: f64,
    /// PGD steps inside targets and exploration (step size `epsilon / pgd_steps`).
    pub pgd_steps: usize,
    pub seed: u64,
}

impl Default for AttackCriticConfig {
    fn default() -> Self {
        AttackCriticConfig {
            total_steps: 20_000,
            learning_starts: 1000,
            batch_size: 100,
            buffer_size: 100_000,
            gamma: 0.99,
            tau: 0.005,
            lr: 1e-3,
            hidden: vec![64, 64],
            exploration_noise: 0.1,
            pgd_steps: 16,
            seed: 0,
        }
    }
}

impl AttackCriticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.buffer_size == 0 || self.pgd_steps == 0 {
            return bad("batch_size, buffer_size and pgd_steps must be positive");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

/// `y = r + gamma (1 - d) Q'(s', clip(mu(s') + delta))`, `delta` the PGD
/// minimizer of `Q'` within `epsilon` (zero when `epsilon = 0`).
pub fn attack_critic_targets(
    batch: &Batch,
    policy: &Policy,
    q_target: &DenseNet,
    epsilon: f64,
    cfg: &AttackCriticConfig,
) -> Result<Vec<f64>> {
    let a_next = policy.act_batch(&batch.s_next)?;
    let delta = pgd_min_delta_batch(q_target, &batch.s_next, &a_next, epsilon, cfg.pgd_steps, epsilon / cfg.pgd_steps as f64)?;
    let executed: Vec<f64> = a_next
        .data()
        .iter()
        .zip(delta.data())
        .map(|(a, d)| (a + d).clamp(-1.0, 1.0))
        .collect();
    let v = q_target.predict(&critic_input(&batch.s_next, &Tensor::new(a_next.shape().to_vec(), executed)?))?;
    Ok((0..batch.len())
        .map(|i| batch.r[i] + cfg.gamma * (1.0 - batch.d[i]) * v.data()[i])
        .collect())
}

/// Fit a critic to a frozen continuous policy.
///
/// `Oa` acts with `mu(s) + delta*` against the critic being trained and
/// regresses on worst-case targets; `Standard` acts with Gaussian noise and
/// uses `epsilon = 0` targets.
pub fn train_attack_critic(
    policy: &Policy,
    env: &mut dyn Environment,
    epsilon: f64,
    mode: CriticMode,
    cfg: &AttackCriticConfig,
) -> Result<DenseNet> {
    cfg.validate()?;
    if policy.is_tabular() {
        return Err(Error::Config(
            "tabular policies use exact critic tables, not trained networks".into(),
        ));
    }
    let (obs_dim, act_dim) = policy.dims();
    if env.observation_dim() != obs_dim || env.action_dim() != act_dim {
        return Err(Error::EnvContract(format!(
            "policy is {obs_dim}-d in / {act_dim}-d out, {} is {} / {}",
            env.id(),
            env.observation_dim(),
            env.action_dim()
        )));
    }
    let eps = match mode {
        CriticMode::Oa => epsilon,
        CriticMode::Standard => 0.0,
    };
    let mut q = critic_net(obs_dim + act_dim, &cfg.hidden, &mut stream::rng(cfg.seed, stream::ATTACK_CRITIC_INIT))?;
    let mut q_target = q.clone();
    let mut opt = optimizer(&q, cfg.lr);
    let mut buffer = ReplayBuffer::new(cfg.buffer_size, stream::rng(cfg.seed, stream::ATTACK_REPLAY).gen());
    let mut explore = stream::rng(cfg.seed, stream::ATTACK_EXPLORATION);
    let noise = Normal::new(0.0, cfg.exploration_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let mut episode = 0;
    let mut s = env.reset(stream::episode_seed(cfg.seed, episode));
    for t in 0..cfg.total_steps {
        let mu = policy.act(&s, &mut explore)?;
        let a: Vec<f64> = match mode {
            CriticMode::Oa => {
                let d = pgd_min_delta(&q, &s, &mu, eps, cfg.pgd_steps, eps / cfg.pgd_steps as f64)?;
                mu.iter().zip(&d).map(|(m, d)| (m + d).clamp(-1.0, 1.0)).collect()
            }
            CriticMode::Standard => mu
                .iter()
                .map(|m| (m + noise.sample(&mut explore)).clamp(-1.0, 1.0))
                .collect(),
        };
        let out = env.step(&a)?;
        buffer.push(Transition {
            s: s.clone(),
            a,
            r: out.reward,
            s_next: out.observation.clone(),
            d: out.terminal,
        });
        if t >= cfg.learning_starts {
            let batch = buffer.sample(cfg.batch_size)?;
            let y = attack_critic_targets(&batch, policy, &q_target, eps, cfg)?;
            regress(&mut q, &mut opt, &critic_input(&batch.s, &batch.a), &y, t, "attack critic loss")?;
            q_target.soft_update_from(&q, cfg.tau);
        }
        if out.done {
            episode += 1;
            s = env.reset(stream::episode_seed(cfg.seed, episode));
        } else {
            s = out.observation;
        }
    }
    Ok(q)
}
