//! Action-space attack bench: the adversary taxonomy (nominal, random,
//! biggest, Min-Q, Min-OA-Q), attack critics, evaluation under attack and
//! normalized scores.

mod critic;
mod report;
mod tabular;

pub use critic::{attack_critic_targets, train_attack_critic, AttackCriticConfig, CriticMode};
pub use report::{parse_table, render_table, report_csv, summaries_from_json, summaries_to_json, Summary};
pub use tabular::{exact_attack_values, executed_distribution, tabular_critic};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{pgd_min_delta, stream, GaussianPolicy};
use crate::envs::{clip_action, Environment};
use crate::error::{Error, Result};
use crate::mdp::{FiniteAAMdp, QTable, TabularPolicy};
use crate::nn::{DenseNet, Tensor};

pub const ATTACK_PGD_STEPS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Nominal,
    Random,
    Biggest,
    MinQ,
    MinOaQ,
}

impl AttackKind {
    /// In the order of the robustness tables.
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Nominal,
        AttackKind::Random,
        AttackKind::Biggest,
        AttackKind::MinQ,
        AttackKind::MinOaQ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Nominal => "nominal",
            AttackKind::Random => "random",
            AttackKind::Biggest => "biggest",
            AttackKind::MinQ => "min_q",
            AttackKind::MinOaQ => "min_oa_q",
        }
    }

    /// Gradient attacks need a critic.
    pub fn critic_mode(self) -> Option<CriticMode> {
        match self {
            AttackKind::MinQ => Some(CriticMode::Standard),
            AttackKind::MinOaQ => Some(CriticMode::Oa),
            _ => None,
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack kind `{s}`")))
    }
}

/// Where a gradient attack gets its critic from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticSource {
    /// Trained in the bench for the attacked policy.
    #[default]
    Bench,
    /// A critic network fragment saved earlier.
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_pgd_steps")]
    pub pgd_steps: usize,
    #[serde(default)]
    pub critic_source: CriticSource,
}

fn default_pgd_steps() -> usize {
    ATTACK_PGD_STEPS
}

impl AttackSpec {
    pub fn new(kind: AttackKind, epsilon: f64) -> Self {
        AttackSpec {
            kind,
            epsilon,
            pgd_steps: ATTACK_PGD_STEPS,
            critic_source: CriticSource::Bench,
        }
    }

    pub fn nominal() -> Self {
        AttackSpec::new(AttackKind::Nominal, 0.0)
    }

    /// Budget actually used; nominal ignores its epsilon.
    pub fn budget(&self) -> f64 {
        if self.kind == AttackKind::Nominal {
            0.0
        } else {
            self.epsilon
        }
    }

    pub fn eta(&self) -> f64 {
        self.epsilon / self.pgd_steps.max(1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("attack epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if self.kind.critic_mode().is_some() && self.pgd_steps == 0 {
            return Err(Error::Config(format!("{} needs pgd_steps >= 1", self.kind)));
        }
        Ok(())
    }
}

/// A frozen policy under evaluation.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Observations are `[state index]`; actions are the chosen embedding.
    Tabular { mdp: FiniteAAMdp, policy: TabularPolicy },
    /// Deterministic actor (TD3).
    Actor(DenseNet),
    /// Gaussian policy acting with its clipped mean (PPO).
    Gaussian(GaussianPolicy),
}

impl Policy {
    pub fn is_tabular(&self) -> bool {
        matches!(self, Policy::Tabular { .. })
    }

    pub fn act<R: Rng>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Policy::Tabular { mdp, policy } => {
                let s = tabular_state(mdp, obs)?;
                let a = match policy {
                    TabularPolicy::Deterministic(v) => v[s],
                    TabularPolicy::Stochastic(_) => {
                        let u: f64 = rng.gen();
                        let support = policy.support(s);
                        let mut acc = 0.0;
                        support
                            .iter()
                            .find(|(_, p)| {
                                acc += p;
                                u < acc
                            })
                            .or(support.last())
                            .map(|(a, _)| *a)
                            .expect("non-empty support")
                    }
                };
                Ok(mdp.embedding(a).to_vec())
            }
            Policy::Actor(net) => {
                check_obs(net.input_size(), obs)?;
                Ok(clip_action(&net.predict_row(obs)))
            }
            Policy::Gaussian(g) => {
                check_obs(g.mean.input_size(), obs)?;
                Ok(g.act(obs))
            }
        }
    }

    /// Row-wise deterministic actions of a continuous policy.
    pub(crate) fn act_batch(&self, s: &Tensor) -> Result<Tensor> {
        let net = match self {
            Policy::Actor(net) => net,
            Policy::Gaussian(g) => &g.mean,
            Policy::Tabular { .. } => {
                return Err(Error::Config("batched acting needs a continuous policy".into()));
            }
        };
        let mut out = net.predict(s)?;
        out.data_mut().iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0));
        Ok(out)
    }

    pub(crate) fn dims(&self) -> (usize, usize) {
        match self {
            Policy::Tabular { mdp, .. } => (1, mdp.action_dim()),
            Policy::Actor(net) => (net.input_size(), net.output_size()),
            Policy::Gaussian(g) => (g.mean.input_size(), g.mean.output_size()),
        }
    }
}

fn check_obs(expected: usize, obs: &[f64]) -> Result<()> {
    if obs.len() == expected {
        Ok(())
    } else {
        Err(Error::Dimension {
            axis: "observation",
            expected,
            actual: obs.len(),
        })
    }
}

fn tabular_state(mdp: &FiniteAAMdp, obs: &[f64]) -> Result<usize> {
    check_obs(1, obs)?;
    let s = obs[0];
    if s >= 0.0 && s.fract() == 0.0 && (s as usize) < mdp.n_states() {
        Ok(s as usize)
    } else {
        Err(Error::EnvContract(format!("observation {s} is not a state index")))
    }
}

/// Critic a gradient attack descends on.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackCritic {
    /// `Q(s, a)` over `[s | a]` rows, for continuous policies.
    Net(DenseNet),
    /// Exact table for tabular policies; the attack picks the offset minimizing it.
    Table(QTable),
}

/// An attack bound to a policy (and critic), ready to perturb actions.
#[derive(Debug, Clone)]
pub struct Attacker<'a> {
    spec: &'a AttackSpec,
    policy: &'a Policy,
    critic: Option<&'a AttackCritic>,
    /// Tabular model re-derived at the attack's budget.
    model: Option<FiniteAAMdp>,
}

impl<'a> Attacker<'a> {
    pub fn new(spec: &'a AttackSpec, policy: &'a Policy, critic: Option<&'a AttackCritic>) -> Result<Self> {
        spec.validate()?;
        let model = match policy {
            Policy::Tabular { mdp, .. } => Some(mdp.with_epsilon(spec.budget())?),
            _ => None,
        };
        if spec.kind.critic_mode().is_some() {
            let (obs, act) = policy.dims();
            match (policy, critic) {
                (_, None) => {
                    return Err(Error::Config(format!("attack {} needs a critic", spec.kind)));
                }
                (Policy::Tabular { mdp, .. }, Some(AttackCritic::Table(q))) => {
                    if q.n_states() != mdp.n_states() || q.n_actions() != mdp.n_actions() {
                        return Err(Error::Dimension {
                            axis: "attack critic table",
                            expected: mdp.n_states() * mdp.n_actions(),
                            actual: q.n_states() * q.n_actions(),
                        });
                    }
                }
                (Policy::Tabular { .. }, Some(AttackCritic::Net(_))) => {
                    return Err(Error::Config("tabular policies are attacked with a critic table".into()));
                }
                (_, Some(AttackCritic::Net(q))) => {
                    if q.input_size() != obs + act || q.output_size() != 1 {
                        return Err(Error::Dimension {
                            axis: "attack critic input",
                            expected: obs + act,
                            actual: q.input_size(),
                        });
                    }
                }
                (_, Some(AttackCritic::Table(_))) => {
                    return Err(Error::Config("continuous policies are attacked with a critic network".into()));
                }
            }
        }
        Ok(Attacker {
            spec,
            policy,
            critic,
            model,
        })
    }

    pub fn spec(&self) -> &AttackSpec {
        self.spec
    }

    /// Executed action for nominal action `a` in observed state `s`.
    pub fn perturb<R: Rng>(&self, s: &[f64], a: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let eps = self.spec.budget();
        if let (Some(m), Policy::Tabular { .. }) = (&self.model, self.policy) {
            let state = tabular_state(m, s)?;
            let action = m.nearest_action(a);
            let executed = match self.spec.kind {
                AttackKind::Nominal => action,
                AttackKind::Random => m.shift(action, rng.gen_range(0..m.n_offsets())),
                AttackKind::Biggest => {
                    let corner: Vec<f64> = (0..m.action_dim()).map(|_| corner_sign(rng) * eps).collect();
                    m.perturbed_action(action, &corner)
                }
                AttackKind::MinQ | AttackKind::MinOaQ => {
                    let Some(AttackCritic::Table(q)) = self.critic else {
                        unreachable!("checked in Attacker::new")
                    };
                    m.shift(action, tabular::min_offset(m, q, state, action))
                }
            };
            return Ok(m.embedding(executed).to_vec());
        }
        let delta: Vec<f64> = match self.spec.kind {
            AttackKind::Nominal => vec![0.0; a.len()],
            AttackKind::Random => a.iter().map(|_| rng.gen_range(-eps..=eps)).collect(),
            AttackKind::Biggest => a.iter().map(|_| corner_sign(rng) * eps).collect(),
            AttackKind::MinQ | AttackKind::MinOaQ => {
                let Some(AttackCritic::Net(q)) = self.critic else {
                    unreachable!("checked in Attacker::new")
                };
                pgd_min_delta(q, s, a, eps, self.spec.pgd_steps, self.spec.eta())?
            }
        };
        Ok(a.iter().zip(&delta).map(|(x, d)| (x + d).clamp(-1.0, 1.0)).collect())
    }
}

fn corner_sign<R: Rng>(rng: &mut R) -> f64 {
    if rng.gen::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// One-shot form of [`Attacker::perturb`].
pub fn perturb<R: Rng>(
    attack: &AttackSpec,
    policy: &Policy,
    s: &[f64],
    a: &[f64],
    rng: &mut R,
    critic: Option<&AttackCritic>,
) -> Result<Vec<f64>> {
    Attacker::new(attack, policy, critic)?.perturb(s, a, rng)
}

/// Which run produced the evaluated policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyId {
    pub env: String,
    pub algorithm: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReturn {
    pub seed: u64,
    pub episode: usize,
    pub ret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: PolicyId,
    pub attack: AttackSpec,
    pub seeds: Vec<u64>,
    /// Sorted by seed, then episode.
    pub episodes: Vec<EpisodeReturn>,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl EvalReport {
    /// Aggregate per-episode returns; records are put in seed order first.
    pub fn from_episodes(policy: PolicyId, attack: AttackSpec, mut episodes: Vec<EpisodeReturn>) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Config("an evaluation needs at least one episode".into()));
        }
        episodes.sort_by_key(|e| (e.seed, e.episode));
        let mut seeds: Vec<u64> = episodes.iter().map(|e| e.seed).collect();
        seeds.dedup();
        let returns: Vec<f64> = episodes.iter().map(|e| e.ret).collect();
        let (mean, stderr) = mean_stderr(&returns);
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: 0,
                quantity: "mean evaluation return".into(),
            });
        }
        Ok(EvalReport {
            policy,
            attack,
            seeds,
            n: episodes.len(),
            episodes,
            mean,
            stderr,
        })
    }

    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.ret).collect()
    }
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`; 0 for one sample).
pub fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Episodes of one seed. Resets follow the seed's episode schedule and the
/// attack draws from its own stream, so each seed is reproducible in isolation.
pub fn rollout_seed(
    attacker: &Attacker<'_>,
    policy: &Policy,
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeReturn>> {
    let (obs, act) = policy.dims();
    if env.observation_dim() != obs || env.action_dim() != act {
        return Err(Error::EnvContract(format!(
            "policy expects {obs}-d observations and {act}-d actions, {} has {} and {}",
            env.id(),
            env.observation_dim(),
            env.action_dim()
        )));
    }
    let mut rng: ChaCha8Rng = stream::rng(seed, stream::ATTACK);
    let discount = env.return_discount();
    let mut out = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut s = env.reset(stream::episode_seed(seed, episode));
        let (mut ret, mut weight) = (0.0, 1.0);
        loop {
            let a = policy.act(&s, &mut rng)?;
            let executed = attacker.perturb(&s, &a, &mut rng)?;
            let step = env.step(&executed)?;
            ret += weight * step.reward;
            weight *= discount;
            if step.done {
                break;
            }
            s = step.observation;
        }
        out.push(EpisodeReturn { seed, episode, ret });
    }
    Ok(out)
}

/// Roll out `policy` under `attack` for `episodes` episodes per seed. The
/// policy sees true states; only executed actions are perturbed.
pub fn evaluate(
    policy: &Policy,
    id: PolicyId,
    env: &mut dyn Environment,
    attack: &AttackSpec,
    critic: Option<&AttackCritic>,
    episodes: usize,
    seeds: &[u64],
) -> Result<EvalReport> {
    if episodes == 0 || seeds.is_empty() {
        return Err(Error::Config("evaluation needs episodes >= 1 and at least one seed".into()));
    }
    let attacker = Attacker::new(attack, policy, critic)?;
    let mut all = Vec::with_capacity(episodes * seeds.len());
    for &seed in seeds {
        all.extend(rollout_seed(&attacker, policy, env, episodes, seed)?);
    }
    EvalReport::from_episodes(id, attack.clone(), all)
}

/// Normalized score `(z - z0) / (z1 - z0)`, not clamped.
pub fn n_score(z: f64, z0: f64, z1: f64) -> Result<f64> {
    if z1 == z0 {
        return Err(Error::DegenerateBaseline(z0));
    }
    Ok((z - z0) / (z1 - z0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_hazard_gridworld, DoubleIntegrator, HazardLayout, TabularEnv};
    use crate::mdp::{policy_evaluation, policy_iteration, state_values};
    use crate::nn::Activation;
    use rand::SeedableRng;

    fn actor() -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Policy::Actor(DenseNet::new(&[2, 8, 1], &[Activation::Tanh, Activation::Tanh], &mut rng).unwrap())
    }

    #[test]
    fn nominal_leaves_actions_alone() {
        let p = actor();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = AttackSpec::new(AttackKind::Nominal, 0.7);
        assert_eq!(perturb(&spec, &p, &[0.1, 0.2], &[0.3], &mut rng, None).unwrap(), vec![0.3]);
    }

    #[test]
    fn gradient_attack_without_critic_is_a_config_error() {
        let p = actor();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in [AttackKind::MinQ, AttackKind::MinOaQ] {
            let spec = AttackSpec::new(kind, 0.2);
            assert!(matches!(perturb(&spec, &p, &[0.0, 0.0], &[0.0], &mut rng, None), Err(Error::Config(_))));
        }
    }

    #[test]
    fn random_and_biggest_stay_in_the_box_and_ball() {
        let p = actor();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [AttackKind::Random, AttackKind::Biggest] {
            let spec = AttackSpec::new(kind, 0.3);
            for i in 0..500 {
                let a = [-1.0 + 2.0 * (i as f64) / 499.0];
                let out = perturb(&spec, &p, &[0.0, 0.0], &a, &mut rng, None).unwrap();
                assert!(out[0].abs() <= 1.0);
                assert!((out[0] - a[0]).abs() <= 0.3 + 1e-15);
            }
        }
    }

    #[test]
    fn n_score_hand_cases() {
        assert_eq!(n_score(-20.0, -200.0, -20.0).unwrap(), 1.0);
        assert_eq!(n_score(-200.0, -200.0, -20.0).unwrap(), 0.0);
        assert_eq!(n_score(-65.0, -200.0, -20.0).unwrap(), 0.75);
        assert!(matches!(n_score(1.0, 3.0, 3.0), Err(Error::DegenerateBaseline(_))));
    }

    #[test]
    fn nominal_tabular_evaluation_is_exact() {
        let m = make_hazard_gridworld(4, -50.0, 1.0).unwrap();
        let pi = policy_iteration(&m, 1e-12, 100).unwrap().policy;
        let exact = state_values(&policy_evaluation(&pi, &m, 1e-13).unwrap(), &pi)[HazardLayout { n: 4 }.start()];
        let policy = Policy::Tabular { mdp: m.clone(), policy: pi };
        let id = PolicyId {
            env: "hazard_gridworld".into(),
            algorithm: "pi".into(),
        };
        let rep = evaluate(&policy, id, &mut TabularEnv::new(m), &AttackSpec::nominal(), None, 3, &[4, 1]).unwrap();
        assert_eq!(rep.n, 6);
        assert_eq!(rep.seeds, vec![1, 4]);
        assert!((rep.mean - exact).abs() < 1e-12);
        assert!(rep.stderr < 1e-12);
    }

    #[test]
    fn evaluation_rejects_mismatched_env() {
        let m = make_hazard_gridworld(3, -50.0, 1.0).unwrap();
        let policy = Policy::Tabular {
            mdp: m,
            policy: TabularPolicy::Deterministic(vec![0; 9]),
        };
        let id = PolicyId {
            env: "x".into(),
            algorithm: "y".into(),
        };
        let err = evaluate(&policy, id, &mut DoubleIntegrator::new(), &AttackSpec::nominal(), None, 1, &[0]);
        assert!(matches!(err, Err(Error::EnvContract(_))));
    }

    #[test]
    fn attack_spec_defaults_and_unknown_fields() {
        let spec: AttackSpec = serde_json::from_str(r#"{"kind": "min_oa_q", "epsilon": 0.2}"#).unwrap();
        assert_eq!(spec.pgd_steps, 30);
        assert_eq!(spec.critic_source, CriticSource::Bench);
        let ck: AttackSpec = serde_json::from_str(r#"{"kind": "min_q", "critic_source": {"checkpoint": "c.json"}}"#).unwrap();
        assert_eq!(ck.critic_source, CriticSource::Checkpoint("c.json".into()));
        assert!(serde_json::from_str::<AttackSpec>(r#"{"kind": "random", "eps": 0.2}"#).is_err());
        assert_eq!("min_oa_q".parse::<AttackKind>().unwrap(), AttackKind::MinOaQ);
    }
}
