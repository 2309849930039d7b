use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::td3::critic_net;
use super::{clip_grad_norm, critic_input, optimizer, pgd_min_delta_batch, regress, stream, EpisodeStats, PpoConfig, TrainLog};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, DenseNet, NetFragment, Tensor};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian policy with a state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean: DenseNet,
    pub log_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianFragment {
    pub mean: NetFragment,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn to_fragment(&self) -> GaussianFragment {
        GaussianFragment {
            mean: self.mean.to_fragment(),
            log_std: self.log_std.clone(),
        }
    }

    pub fn from_fragment(f: &GaussianFragment) -> Result<Self> {
        let mean = DenseNet::from_fragment(&f.mean)?;
        if f.log_std.len() != mean.output_size() {
            return Err(Error::Dimension {
                axis: "log_std",
                expected: mean.output_size(),
                actual: f.log_std.len(),
            });
        }
        Ok(GaussianPolicy {
            mean,
            log_std: f.log_std.clone(),
        })
    }

    /// Deterministic (mean) action, clipped to the box.
    pub fn act(&self, obs: &[f64]) -> Vec<f64> {
        self.mean.predict_row(obs).into_iter().map(|m| m.clamp(-1.0, 1.0)).collect()
    }

    fn log_prob(&self, mu: &[f64], a: &[f64]) -> f64 {
        mu.iter()
            .zip(a)
            .zip(&self.log_std)
            .map(|((m, a), ls)| {
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - 0.5 * LOG_2PI
            })
            .sum()
    }
}

/// Generalized advantage estimates and returns-to-go.
///
/// `values` carries one extra trailing entry, the bootstrap value after the last
/// step. `dones[t]` cuts the recursion after step `t`.
pub fn gae_advantages(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::Dimension {
            axis: "gae inputs",
            expected: n + 1,
            actual: values.len(),
        });
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let keep = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * keep - values[t];
        next = delta + gamma * lambda * keep * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[derive(Debug, Clone)]
pub struct PpoOutcome {
    pub policy: GaussianPolicy,
    pub value: DenseNet,
    pub q_adv: Option<DenseNet>,
    pub log: TrainLog,
    /// Per update cycle, `max |ratio - 1|` over the first minibatch of the first epoch.
    pub first_ratio_deviation: Vec<f64>,
}

struct Rollout {
    s: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    logp: Vec<f64>,
    /// Rewards for GAE, with time-limit bootstraps folded in.
    r: Vec<f64>,
    r_env: Vec<f64>,
    v: Vec<f64>,
    s_next: Vec<Vec<f64>>,
    /// True terminations, for the OA critic's targets.
    terminal: Vec<bool>,
    /// Episode boundaries of any kind, for GAE.
    done: Vec<bool>,
}

fn rows(v: &[Vec<f64>], idx: &[usize]) -> Result<Tensor> {
    Tensor::from_rows(&idx.iter().map(|&i| v[i].clone()).collect::<Vec<_>>())
}

fn train(env: &mut dyn Environment, cfg: &PpoConfig, with_oa: bool) -> Result<PpoOutcome> {
    cfg.validate()?;
    let (obs_dim, act_dim) = (env.observation_dim(), env.action_dim());
    let mut sizes = vec![obs_dim];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(act_dim);
    let mut acts = vec![Activation::Tanh; cfg.hidden.len()];
    acts.push(Activation::Identity);
    let mut policy = GaussianPolicy {
        mean: DenseNet::new(&sizes, &acts, &mut stream::rng(cfg.seed, stream::ACTOR_INIT))?,
        log_std: vec![cfg.initial_log_std; act_dim],
    };
    let mut value = DenseNet::mlp(obs_dim, &cfg.hidden, 1, Activation::Tanh, &mut stream::rng(cfg.seed, stream::VALUE_INIT))?;
    let mut q_adv = if with_oa {
        Some(critic_net(
            obs_dim + act_dim,
            &cfg.hidden,
            &mut stream::rng(cfg.seed, stream::OA_CRITIC_INIT),
        )?)
    } else {
        None
    };
    let mut q_adv_target = q_adv.clone();
    let n_pol = policy.mean.n_params() + act_dim;
    let mut pol_opt = AdamState::new(n_pol, cfg.learning_rate).with_eps(1e-5);
    let mut val_opt = optimizer(&value, cfg.learning_rate).with_eps(1e-5);
    let mut qa_opt = q_adv.as_ref().map(|q| optimizer(q, cfg.learning_rate));

    let mut explore = stream::rng(cfg.seed, stream::EXPLORATION);
    let mut shuffle = stream::rng(cfg.seed, stream::MINIBATCH);
    let discount = env.return_discount();
    let n_updates = cfg.total_steps.div_ceil(cfg.rollout_steps).max(1);

    let mut log = TrainLog::default();
    let mut ratio_dev = Vec::with_capacity(n_updates);
    let mut episode = 0;
    let mut s = env.reset(stream::episode_seed(cfg.seed, episode));
    let (mut ret, mut weight) = (0.0, 1.0);
    let mut stats = EpisodeStats::default();
    let mut step = 0;

    for update in 0..n_updates {
        let n = cfg.rollout_steps;
        let mut ro = Rollout {
            s: Vec::with_capacity(n),
            a: Vec::with_capacity(n),
            logp: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            r_env: Vec::with_capacity(n),
            v: Vec::with_capacity(n + 1),
            s_next: Vec::with_capacity(n),
            terminal: Vec::with_capacity(n),
            done: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let mu = policy.mean.predict_row(&s);
            let a: Vec<f64> = mu
                .iter()
                .zip(&policy.log_std)
                .map(|(m, ls)| {
                    let z: f64 = StandardNormal.sample(&mut explore);
                    m + ls.exp() * z
                })
                .collect();
            let executed: Vec<f64> = a.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
            let out = env.step(&executed)?;
            step += 1;
            ret += weight * out.reward;
            weight *= discount;
            let mut r = out.reward;
            if out.done && !out.terminal {
                // time-limit end: fold the bootstrap value into the reward
                r += cfg.gamma * value.predict_row(&out.observation)[0];
            }
            ro.logp.push(policy.log_prob(&mu, &a));
            ro.v.push(value.predict_row(&s)[0]);
            ro.s.push(s.clone());
            ro.a.push(a);
            ro.r.push(r);
            ro.r_env.push(out.reward);
            ro.s_next.push(out.observation.clone());
            ro.terminal.push(out.terminal);
            ro.done.push(out.done);
            if out.done {
                log.rows.push(stats.row(step, episode, ret));
                episode += 1;
                s = env.reset(stream::episode_seed(cfg.seed, episode));
                (ret, weight) = (0.0, 1.0);
            } else {
                s = out.observation;
            }
        }
        ro.v.push(value.predict_row(&s)[0]);
        let (adv, returns) = gae_advantages(&ro.r, &ro.v, &ro.done, cfg.gamma, cfg.gae_lambda)?;

        let lr = if cfg.lr_decay {
            cfg.learning_rate * (1.0 - update as f64 / n_updates as f64)
        } else {
            cfg.learning_rate
        };
        pol_opt.lr = lr;
        val_opt.lr = lr;
        if let Some(o) = &mut qa_opt {
            o.lr = lr;
        }

        let all: Vec<usize> = (0..n).collect();
        // Q_adv(s, a + delta*) per sample, held fixed through the epochs
        let q_term = match &q_adv {
            None => None,
            Some(q) => {
                let st = rows(&ro.s, &all)?;
                let at = Tensor::from_rows(&ro.a.iter().map(|a| a.iter().map(|x| x.clamp(-1.0, 1.0)).collect()).collect::<Vec<_>>())?;
                let d = pgd_min_delta_batch(q, &st, &at, cfg.epsilon, cfg.pgd_steps, cfg.eta())?;
                let pert: Vec<f64> = at.data().iter().zip(d.data()).map(|(a, d)| (a + d).clamp(-1.0, 1.0)).collect();
                Some(q.predict(&critic_input(&st, &Tensor::new(at.shape().to_vec(), pert)?))?.into_data())
            }
        };

        let mb_size = n / cfg.minibatches;
        let mut order = all.clone();
        let (mut vloss, mut qloss) = ((0.0, 0usize), (0.0, 0usize));
        let mut first_dev = None;
        for _ in 0..cfg.update_epochs {
            order.shuffle(&mut shuffle);
            for mb in order.chunks(mb_size).filter(|c| c.len() == mb_size) {
                let st = rows(&ro.s, mb)?;
                let b = mb.len() as f64;
                // advantage term, normalized per minibatch
                let a_mb: Vec<f64> = mb.iter().map(|&i| adv[i]).collect();
                let mean = a_mb.iter().sum::<f64>() / b;
                let std = (a_mb.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / b).sqrt();
                let mixed: Vec<f64> = a_mb
                    .iter()
                    .zip(mb)
                    .map(|(a, &i)| {
                        let a_hat = (a - mean) / (std + 1e-8);
                        match &q_term {
                            None => a_hat,
                            Some(q) => cfg.omega * a_hat + (1.0 - cfg.omega) * q[i],
                        }
                    })
                    .collect();

                // clipped surrogate
                let (mu, tape) = policy.mean.forward(&st)?;
                let mut g_mu = vec![0.0; mu.len()];
                let mut g_ls = vec![0.0; act_dim];
                let mut dev: f64 = 0.0;
                for (k, &i) in mb.iter().enumerate() {
                    let m = mu.row(k);
                    let ratio = (policy.log_prob(m, &ro.a[i]) - ro.logp[i]).exp();
                    dev = dev.max((ratio - 1.0).abs());
                    let clipped = ratio.clamp(1.0 - cfg.surrogate_clip, 1.0 + cfg.surrogate_clip);
                    let adv_k = mixed[k];
                    if !(ratio * adv_k).is_finite() {
                        return Err(Error::NonFiniteLoss {
                            step,
                            quantity: "policy surrogate".into(),
                        });
                    }
                    if ratio * adv_k > clipped * adv_k {
                        continue; // clipped term is the minimum: no gradient
                    }
                    let dlogp = -adv_k * ratio / b;
                    for j in 0..act_dim {
                        let var = (2.0 * policy.log_std[j]).exp();
                        let diff = ro.a[i][j] - m[j];
                        g_mu[k * act_dim + j] += dlogp * diff / var;
                        g_ls[j] += dlogp * (diff * diff / var - 1.0);
                    }
                }
                first_dev.get_or_insert(dev);
                let gp = policy.mean.backward(&tape, &Tensor::new(mu.shape().to_vec(), g_mu)?)?.params;
                let mut grad = gp.into_data();
                grad.extend_from_slice(&g_ls);
                clip_grad_norm(&mut grad, cfg.max_grad_norm);
                let mut theta = policy.mean.params().to_vec();
                theta.extend_from_slice(&policy.log_std);
                pol_opt.apply(&mut theta, &grad).map_err(|e| match e {
                    Error::NonFiniteGradient { .. } => Error::NonFiniteLoss {
                        step,
                        quantity: "policy gradient".into(),
                    },
                    e => e,
                })?;
                let split = policy.mean.n_params();
                policy.mean.set_params(&theta[..split])?;
                policy.log_std.copy_from_slice(&theta[split..]);

                // value regression on returns-to-go
                let (v, vt) = value.forward(&st)?;
                let mut up = Vec::with_capacity(mb.len());
                let mut l = 0.0;
                for (k, &i) in mb.iter().enumerate() {
                    let e = v.data()[k] - returns[i];
                    l += e * e / b;
                    up.push(2.0 * e / b);
                }
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step,
                        quantity: "value loss".into(),
                    });
                }
                let mut gv = value.backward(&vt, &Tensor::new(v.shape().to_vec(), up)?)?.params.into_data();
                clip_grad_norm(&mut gv, cfg.max_grad_norm);
                val_opt.apply(value.params_mut(), &gv)?;
                vloss = (vloss.0 + l, vloss.1 + 1);

                // OA critic regression on worst-case targets
                if let (Some(q), Some(qt), Some(opt)) = (&mut q_adv, &mut q_adv_target, &mut qa_opt) {
                    let sn = rows(&ro.s_next, mb)?;
                    let mu_next = Tensor::new(
                        vec![mb.len(), act_dim],
                        policy.mean.predict(&sn)?.into_data().into_iter().map(|x| x.clamp(-1.0, 1.0)).collect(),
                    )?;
                    let d = pgd_min_delta_batch(qt, &sn, &mu_next, cfg.epsilon, cfg.pgd_steps, cfg.eta())?;
                    let pert: Vec<f64> = mu_next.data().iter().zip(d.data()).map(|(a, d)| (a + d).clamp(-1.0, 1.0)).collect();
                    let qn = qt.predict(&critic_input(&sn, &Tensor::new(mu_next.shape().to_vec(), pert)?))?;
                    let y: Vec<f64> = mb
                        .iter()
                        .enumerate()
                        .map(|(k, &i)| {
                            let cont = if ro.terminal[i] { 0.0 } else { cfg.gamma };
                            ro.r_env[i] + cont * qn.data()[k]
                        })
                        .collect();
                    let at = Tensor::from_rows(
                        &mb.iter()
                            .map(|&i| ro.a[i].iter().map(|x| x.clamp(-1.0, 1.0)).collect())
                            .collect::<Vec<_>>(),
                    )?;
                    let l = regress(q, opt, &critic_input(&st, &at), &y, step, "oa critic loss")?;
                    qt.soft_update_from(q, cfg.tau);
                    qloss = (qloss.0 + l, qloss.1 + 1);
                }
            }
        }
        ratio_dev.push(first_dev.unwrap_or(0.0));
        stats = EpisodeStats::default();
        if vloss.1 > 0 {
            stats.critic(vloss.0 / vloss.1 as f64);
        }
        if qloss.1 > 0 {
            stats.oa_critic(qloss.0 / qloss.1 as f64);
        }
    }
    Ok(PpoOutcome {
        policy,
        value,
        q_adv,
        log,
        first_ratio_deviation: ratio_dev,
    })
}

/// OA-PPO: clipped-surrogate updates driven by `omega * A_hat + (1-omega) * Q_adv(s, a + delta*)`.
pub fn oa_ppo_train(env: &mut dyn Environment, cfg: &PpoConfig) -> Result<PpoOutcome> {
    train(env, cfg, true)
}

/// Vanilla clipped-surrogate PPO; `epsilon` and `omega` are ignored.
pub fn ppo_train(env: &mut dyn Environment, cfg: &PpoConfig) -> Result<PpoOutcome> {
    train(env, cfg, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::DoubleIntegrator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(T^2) sum of discounted TD residuals.
    fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], g: f64, l: f64) -> Vec<f64> {
        (0..r.len())
            .map(|t| {
                let mut total = 0.0;
                let mut w = 1.0;
                for k in t..r.len() {
                    let keep = if d[k] { 0.0 } else { 1.0 };
                    total += w * (r[k] + g * v[k + 1] * keep - v[k]);
                    if d[k] {
                        break;
                    }
                    w *= g * l;
                }
                total
            })
            .collect()
    }

    #[test]
    fn gae_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d: Vec<bool> = (0..6).map(|_| rng.gen_bool(0.3)).collect();
            let (g, l) = (rng.gen_range(0.5..1.0), rng.gen_range(0.0..=1.0));
            let (adv, ret) = gae_advantages(&r, &v, &d, g, l).unwrap();
            for (t, o) in gae_oracle(&r, &v, &d, g, l).iter().enumerate() {
                assert!((adv[t] - o).abs() <= 1e-12);
                assert_eq!(ret[t], adv[t] + v[t]);
            }
        }
    }

    #[test]
    fn gae_special_cases() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, -0.5, 0.25, 2.0];
        let d = [false, true, false];
        let (a0, _) = gae_advantages(&r, &v, &d, 0.9, 0.0).unwrap();
        for t in 0..3 {
            let keep = if d[t] { 0.0 } else { 1.0 };
            assert_eq!(a0[t], r[t] + 0.9 * v[t + 1] * keep - v[t]);
        }
        let (a1, _) = gae_advantages(&r, &[0.0; 4], &[false; 3], 0.9, 1.0).unwrap();
        assert!((a1[0] - (1.0 + 0.9 * 2.0 + 0.81 * 3.0)).abs() < 1e-12);
        assert!(gae_advantages(&r, &v[..3], &d, 0.9, 0.9).is_err());
    }

    fn tiny(seed: u64) -> PpoConfig {
        PpoConfig {
            hidden: vec![8, 8],
            rollout_steps: 64,
            minibatches: 4,
            update_epochs: 2,
            pgd_steps: 4,
            total_steps: 192,
            seed,
            ..PpoConfig::default()
        }
    }

    #[test]
    fn omega_one_is_vanilla_and_first_ratio_is_one() {
        let cfg = PpoConfig { omega: 1.0, ..tiny(4) };
        let oa = oa_ppo_train(&mut DoubleIntegrator::new(), &cfg).unwrap();
        let van = ppo_train(&mut DoubleIntegrator::new(), &cfg).unwrap();
        assert_eq!(oa.first_ratio_deviation.len(), 3);
        assert_eq!(oa.policy, van.policy);
        assert_eq!(oa.value.params(), van.value.params());
        assert!(oa.first_ratio_deviation.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn fragment_round_trip() {
        let out = oa_ppo_train(&mut DoubleIntegrator::new(), &tiny(1)).unwrap();
        let text = serde_json::to_string(&out.policy.to_fragment()).unwrap();
        let back = GaussianPolicy::from_fragment(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, out.policy);
    }
}
