use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    convex, critic_input, optimizer, pgd_min_delta_batch, regress, stream, surgery, Batch, EpisodeStats, ReplayBuffer,
    Td3Config, TrainLog, Transition,
};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::nn::{dot, Activation, AdamState, DenseNet, NetFragment, Tensor};

/// Online and target networks of a TD3 run. The OA critic is absent for vanilla TD3.
#[derive(Debug, Clone)]
pub struct Td3Nets {
    pub actor: DenseNet,
    pub actor_target: DenseNet,
    pub q1: DenseNet,
    pub q2: DenseNet,
    pub q1_target: DenseNet,
    pub q2_target: DenseNet,
    pub q_adv: Option<DenseNet>,
    pub q_adv_target: Option<DenseNet>,
}

/// Serializable subset of [`Td3Nets`] needed to evaluate or attack a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3Fragments {
    pub actor: NetFragment,
    pub q1: NetFragment,
    pub q_adv: Option<NetFragment>,
}

impl Td3Nets {
    pub fn init(obs_dim: usize, act_dim: usize, cfg: &Td3Config, with_oa: bool) -> Result<Self> {
        let actor = actor_net(obs_dim, act_dim, &cfg.hidden, &mut stream::rng(cfg.seed, stream::ACTOR_INIT))?;
        let mut crng = stream::rng(cfg.seed, stream::CRITIC_INIT);
        let q1 = critic_net(obs_dim + act_dim, &cfg.hidden, &mut crng)?;
        let q2 = critic_net(obs_dim + act_dim, &cfg.hidden, &mut crng)?;
        let q_adv = if with_oa {
            Some(critic_net(
                obs_dim + act_dim,
                &cfg.hidden,
                &mut stream::rng(cfg.seed, stream::OA_CRITIC_INIT),
            )?)
        } else {
            None
        };
        Ok(Td3Nets {
            actor_target: actor.clone(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q_adv_target: q_adv.clone(),
            actor,
            q1,
            q2,
            q_adv,
        })
    }

    pub fn fragments(&self) -> Td3Fragments {
        Td3Fragments {
            actor: self.actor.to_fragment(),
            q1: self.q1.to_fragment(),
            q_adv: self.q_adv.as_ref().map(DenseNet::to_fragment),
        }
    }
}

/// Tanh hidden layers and a tanh head, so actions land in the box.
pub(crate) fn actor_net<R: Rng>(obs: usize, act: usize, hidden: &[usize], rng: &mut R) -> Result<DenseNet> {
    let mut sizes = vec![obs];
    sizes.extend_from_slice(hidden);
    sizes.push(act);
    let mut net = DenseNet::new(&sizes, &vec![Activation::Tanh; sizes.len() - 1], rng)?;
    // near-zero initial actions, as in DDPG: U(-3e-3, 3e-3) on the output layer
    let tail = sizes[sizes.len() - 2] * act + act;
    let n = net.n_params();
    for w in &mut net.params_mut()[n - tail..] {
        *w = rng.gen_range(-FINAL_LAYER_INIT..=FINAL_LAYER_INIT);
    }
    Ok(net)
}

const FINAL_LAYER_INIT: f64 = 3e-3;

pub(crate) fn critic_net<R: Rng>(input: usize, hidden: &[usize], rng: &mut R) -> Result<DenseNet> {
    DenseNet::mlp(input, hidden, 1, Activation::Relu, rng)
}

#[derive(Debug, Clone)]
pub struct Td3Outcome {
    pub nets: Td3Nets,
    pub log: TrainLog,
}

/// Critic targets `(y, y_adv)` for a batch.
///
/// `y` uses the smoothed target action and the smaller twin; `y_adv` (empty
/// without an OA critic) evaluates the target OA critic at the PGD-perturbed
/// target action.
pub fn td3_targets(batch: &Batch, nets: &Td3Nets, cfg: &Td3Config, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let mu = nets.actor_target.predict(&batch.s_next)?;
    let noise = Normal::new(0.0, cfg.smoothing_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let a_next: Vec<f64> = mu
        .data()
        .iter()
        .map(|m| {
            let n = if cfg.smoothing_noise > 0.0 { noise.sample(rng) } else { 0.0 };
            (m + n.clamp(-cfg.smoothing_clip, cfg.smoothing_clip)).clamp(-1.0, 1.0)
        })
        .collect();
    let a_next = Tensor::new(mu.shape().to_vec(), a_next)?;
    let x = critic_input(&batch.s_next, &a_next);
    let q1 = nets.q1_target.predict(&x)?;
    let q2 = nets.q2_target.predict(&x)?;
    let cont: Vec<f64> = batch.d.iter().map(|d| cfg.gamma * (1.0 - d)).collect();
    let y = (0..batch.len())
        .map(|i| batch.r[i] + cont[i] * q1.data()[i].min(q2.data()[i]))
        .collect();
    let y_adv = match &nets.q_adv_target {
        None => Vec::new(),
        Some(qa) => {
            let delta = pgd_min_delta_batch(qa, &batch.s_next, &a_next, cfg.epsilon, cfg.pgd_steps, cfg.eta())?;
            let perturbed: Vec<f64> = a_next
                .data()
                .iter()
                .zip(delta.data())
                .map(|(a, d)| (a + d).clamp(-1.0, 1.0))
                .collect();
            let x = critic_input(&batch.s_next, &Tensor::new(a_next.shape().to_vec(), perturbed)?);
            let v = qa.predict(&x)?;
            (0..batch.len()).map(|i| batch.r[i] + cont[i] * v.data()[i]).collect()
        }
    };
    Ok((y, y_adv))
}

/// Gradient of `mean_i q(s_i, a_i)` with respect to the action rows.
fn action_gradient(q: &DenseNet, s: &Tensor, a: &Tensor) -> Result<Vec<f64>> {
    let (y, tape) = q.forward(&critic_input(s, a))?;
    let n = y.len() as f64;
    let g = q.backward(&tape, &Tensor::new(y.shape().to_vec(), vec![1.0 / n; y.len()])?)?;
    let (ds, da) = (s.cols(), a.cols());
    let mut out = Vec::with_capacity(a.len());
    for i in 0..s.rows() {
        out.extend_from_slice(&g.input.row(i)[ds..ds + da]);
    }
    Ok(out)
}

struct Optimizers {
    actor: AdamState,
    q1: AdamState,
    q2: AdamState,
    q_adv: Option<AdamState>,
}

fn update(
    nets: &mut Td3Nets,
    opts: &mut Optimizers,
    cfg: &Td3Config,
    t: usize,
    batch: &Batch,
    smooth: &mut ChaCha8Rng,
    stats: &mut EpisodeStats,
) -> Result<()> {
    let (y, y_adv) = td3_targets(batch, nets, cfg, smooth)?;
    let x = critic_input(&batch.s, &batch.a);
    let l1 = regress(&mut nets.q1, &mut opts.q1, &x, &y, t, "critic loss (q1)")?;
    let l2 = regress(&mut nets.q2, &mut opts.q2, &x, &y, t, "critic loss (q2)")?;
    stats.critic(0.5 * (l1 + l2));
    if let (Some(qa), Some(opt)) = (&mut nets.q_adv, &mut opts.q_adv) {
        stats.oa_critic(regress(qa, opt, &x, &y_adv, t, "oa critic loss")?);
    }
    if t % cfg.policy_delay != 0 {
        return Ok(());
    }
    if t >= cfg.learning_starts + cfg.actor_warmup {
        actor_update(nets, opts, cfg, t, batch, stats)?;
    }
    nets.actor_target.soft_update_from(&nets.actor, cfg.tau);
    nets.q1_target.soft_update_from(&nets.q1, cfg.tau);
    nets.q2_target.soft_update_from(&nets.q2, cfg.tau);
    if let (Some(target), Some(q)) = (&mut nets.q_adv_target, &nets.q_adv) {
        target.soft_update_from(q, cfg.tau);
    }
    Ok(())
}

fn actor_update(
    nets: &mut Td3Nets,
    opts: &mut Optimizers,
    cfg: &Td3Config,
    t: usize,
    batch: &Batch,
    stats: &mut EpisodeStats,
) -> Result<()> {
    let (mu, tape) = nets.actor.forward(&batch.s)?;
    let ga_q = action_gradient(&nets.q1, &batch.s, &mu)?;
    let g_q = nets.actor.backward(&tape, &Tensor::new(mu.shape().to_vec(), ga_q)?)?.params;
    let mut direction = match &nets.q_adv {
        None => g_q.into_data(),
        Some(qa) => {
            let delta = pgd_min_delta_batch(qa, &batch.s, &mu, cfg.epsilon, cfg.pgd_steps, cfg.eta())?;
            let raw: Vec<f64> = mu.data().iter().zip(delta.data()).map(|(m, d)| m + d).collect();
            let exec = Tensor::new(mu.shape().to_vec(), raw.iter().map(|v| v.clamp(-1.0, 1.0)).collect())?;
            let mut ga = action_gradient(qa, &batch.s, &exec)?;
            // the box clip has zero derivative where it binds
            for (g, v) in ga.iter_mut().zip(&raw) {
                if v.abs() > 1.0 {
                    *g = 0.0;
                }
            }
            let g_adv = nets.actor.backward(&tape, &Tensor::new(mu.shape().to_vec(), ga)?)?.params;
            let (dir, conflict) = if cfg.gradient_surgery {
                surgery(g_q.data(), g_adv.data(), cfg.omega)
            } else {
                (
                    convex(g_q.data(), g_adv.data(), cfg.omega),
                    dot(g_q.data(), g_adv.data()) < 0.0,
                )
            };
            stats.actor_update(conflict);
            dir
        }
    };
    // ascend the objective
    direction.iter_mut().for_each(|g| *g = -*g);
    if direction.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step: t,
            quantity: "actor objective gradient".into(),
        });
    }
    opts.actor.apply(nets.actor.params_mut(), &direction)?;
    Ok(())
}

fn train(env: &mut dyn Environment, cfg: &Td3Config, with_oa: bool) -> Result<Td3Outcome> {
    cfg.validate()?;
    let (obs_dim, act_dim) = (env.observation_dim(), env.action_dim());
    let mut nets = Td3Nets::init(obs_dim, act_dim, cfg, with_oa)?;
    let mut opts = Optimizers {
        actor: optimizer(&nets.actor, cfg.actor_lr),
        q1: optimizer(&nets.q1, cfg.critic_lr),
        q2: optimizer(&nets.q2, cfg.critic_lr),
        q_adv: nets.q_adv.as_ref().map(|q| optimizer(q, cfg.critic_lr)),
    };
    let mut buffer = ReplayBuffer::new(cfg.buffer_size, stream::rng(cfg.seed, stream::REPLAY).gen());
    let mut explore = stream::rng(cfg.seed, stream::EXPLORATION);
    let mut smooth = stream::rng(cfg.seed, stream::SMOOTHING);
    let noise = Normal::new(0.0, cfg.exploration_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let discount = env.return_discount();

    let mut log = TrainLog::default();
    let mut episode = 0;
    let mut s = env.reset(stream::episode_seed(cfg.seed, episode));
    let (mut ret, mut weight) = (0.0, 1.0);
    let mut stats = EpisodeStats::default();
    for t in 0..cfg.total_steps {
        let a: Vec<f64> = if t < cfg.learning_starts {
            (0..act_dim).map(|_| explore.gen_range(-1.0..=1.0)).collect()
        } else {
            nets.actor
                .predict_row(&s)
                .into_iter()
                .map(|m| (m + noise.sample(&mut explore)).clamp(-1.0, 1.0))
                .collect()
        };
        let out = env.step(&a)?;
        ret += weight * out.reward;
        weight *= discount;
        buffer.push(Transition {
            s: s.clone(),
            a,
            r: out.reward * cfg.reward_scale,
            s_next: out.observation.clone(),
            d: out.terminal,
        });
        if t >= cfg.learning_starts {
            let batch = buffer.sample(cfg.batch_size)?;
            update(&mut nets, &mut opts, cfg, t, &batch, &mut smooth, &mut stats)?;
        }
        if out.done {
            log.rows.push(stats.row(t + 1, episode, ret));
            episode += 1;
            s = env.reset(stream::episode_seed(cfg.seed, episode));
            (ret, weight) = (0.0, 1.0);
            stats = EpisodeStats::default();
        } else {
            s = out.observation;
        }
    }
    Ok(Td3Outcome { nets, log })
}

/// OA-TD3: twin critics plus an OA critic regressed on worst-case targets; the
/// actor follows a (surgery-combined) mix of the nominal and OA critic gradients.
pub fn oa_td3_train(env: &mut dyn Environment, cfg: &Td3Config) -> Result<Td3Outcome> {
    train(env, cfg, true)
}

/// Vanilla TD3; `epsilon`, `omega` and `gradient_surgery` are ignored.
pub fn td3_train(env: &mut dyn Environment, cfg: &Td3Config) -> Result<Td3Outcome> {
    train(env, cfg, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::DoubleIntegrator;

    fn tiny(seed: u64) -> Td3Config {
        Td3Config {
            hidden: vec![8, 8],
            total_steps: 600,
            learning_starts: 200,
            actor_warmup: 100,
            batch_size: 16,
            pgd_steps: 4,
            seed,
            ..Td3Config::default()
        }
    }

    #[test]
    fn omega_one_without_surgery_is_vanilla() {
        let cfg = Td3Config {
            omega: 1.0,
            gradient_surgery: false,
            ..tiny(3)
        };
        let oa = oa_td3_train(&mut DoubleIntegrator::new(), &cfg).unwrap();
        let van = td3_train(&mut DoubleIntegrator::new(), &cfg).unwrap();
        assert_eq!(oa.nets.actor.params(), van.nets.actor.params());
        assert_eq!(oa.nets.q1.params(), van.nets.q1.params());
        let r = |o: &Td3Outcome| o.log.rows.iter().map(|r| (r.nominal_return, r.critic_loss)).collect::<Vec<_>>();
        assert_eq!(r(&oa), r(&van));
    }

    #[test]
    fn same_seed_same_log() {
        let a = oa_td3_train(&mut DoubleIntegrator::new(), &tiny(5)).unwrap();
        let b = oa_td3_train(&mut DoubleIntegrator::new(), &tiny(5)).unwrap();
        assert_eq!(a.log.to_csv(), b.log.to_csv());
        assert_eq!(a.nets.actor.params(), b.nets.actor.params());
        assert_eq!(a.log.rows.len(), 3);
    }

    #[test]
    fn terminal_rows_target_reward() {
        let cfg = tiny(1);
        let nets = Td3Nets::init(2, 1, &cfg, true).unwrap();
        let t = |d| Transition {
            s: vec![0.1, 0.2],
            a: vec![0.3],
            r: -0.7,
            s_next: vec![0.4, -0.1],
            d,
        };
        let (a, b) = (t(true), t(false));
        let batch = Batch::from_transitions(&[&a, &b]).unwrap();
        let mut rng = stream::rng(0, 0);
        let (y, y_adv) = td3_targets(&batch, &nets, &cfg, &mut rng).unwrap();
        assert_eq!((y[0], y_adv[0]), (-0.7, -0.7));
        assert_ne!(y[1], -0.7);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = Td3Config {
            omega: 1.5,
            ..Td3Config::default()
        };
        assert!(matches!(oa_td3_train(&mut DoubleIntegrator::new(), &cfg), Err(Error::Config(_))));
    }
}
