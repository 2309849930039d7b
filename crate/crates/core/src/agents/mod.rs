//! OA-TD3 and OA-PPO trainers on top of the `nn` diff engine, plus the pieces
//! they share: replay storage, the PGD perturbation search and gradient surgery.

mod config;
mod ppo;
mod td3;

pub use config::{PpoConfig, Td3Config};
pub use ppo::{gae_advantages, oa_ppo_train, ppo_train, GaussianFragment, GaussianPolicy, PpoOutcome};
pub(crate) use td3::critic_net;
pub use td3::{oa_td3_train, td3_targets, td3_train, Td3Fragments, Td3Nets, Td3Outcome};

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dot, norm_sq, AdamState, DenseNet, Tensor};

/// Salts for the independent random streams of a run. Keeping one stream per
/// consumer means switching a component off never shifts the others.
pub mod stream {
    pub const ACTOR_INIT: u64 = 0x1001;
    pub const CRITIC_INIT: u64 = 0x1002;
    pub const OA_CRITIC_INIT: u64 = 0x1003;
    pub const VALUE_INIT: u64 = 0x1004;
    pub const EXPLORATION: u64 = 0x2001;
    pub const REPLAY: u64 = 0x2002;
    pub const SMOOTHING: u64 = 0x2003;
    pub const MINIBATCH: u64 = 0x2004;
    pub const ENV_RESET: u64 = 0x3001;
    pub const ATTACK: u64 = 0x4001;
    pub const ATTACK_CRITIC_INIT: u64 = 0x4002;
    pub const ATTACK_EXPLORATION: u64 = 0x4003;
    pub const ATTACK_REPLAY: u64 = 0x4004;

    pub fn rng(seed: u64, salt: u64) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    /// Reset seed of the `episode`-th episode of a run.
    pub fn episode_seed(seed: u64, episode: usize) -> u64 {
        (seed ^ ENV_RESET).wrapping_mul(1_000_003).wrapping_add(episode as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// True termination (time-limit ends are stored as false).
    pub d: bool,
}

/// Column-stacked minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub s: Tensor,
    pub a: Tensor,
    pub r: Vec<f64>,
    pub s_next: Tensor,
    pub d: Vec<f64>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let rows = |f: &dyn Fn(&Transition) -> &Vec<f64>| Tensor::from_rows(&items.iter().map(|t| f(t).clone()).collect::<Vec<_>>());
        Ok(Batch {
            s: rows(&|t| &t.s)?,
            a: rows(&|t| &t.a)?,
            r: items.iter().map(|t| t.r).collect(),
            s_next: rows(&|t| &t.s_next)?,
            d: items.iter().map(|t| if t.d { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// Fixed-capacity ring with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample_indices(&mut self, n: usize) -> Vec<usize> {
        let len = self.items.len();
        (0..n).map(|_| self.rng.gen_range(0..len)).collect()
    }

    pub fn sample(&mut self, n: usize) -> Result<Batch> {
        if self.items.is_empty() {
            return Err(Error::Config("cannot sample from an empty replay buffer".into()));
        }
        let idx = self.sample_indices(n);
        let picked: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Batch::from_transitions(&picked)
    }
}

/// `[s | a]` rows, the input layout of every Q network.
pub fn critic_input(s: &Tensor, a: &Tensor) -> Tensor {
    let (n, ds, da) = (s.rows(), s.cols(), a.cols());
    let mut data = Vec::with_capacity(n * (ds + da));
    for i in 0..n {
        data.extend_from_slice(s.row(i));
        data.extend_from_slice(a.row(i));
    }
    Tensor::new(vec![n, ds + da], data).expect("consistent rows")
}

fn clip_box(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// `Q(s, clip(a + delta))` per row, and optionally its gradient in the action.
fn q_at(q: &DenseNet, s: &Tensor, a: &Tensor, delta: &[f64], grad: bool) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let executed: Vec<f64> = a.data().iter().zip(delta).map(|(x, d)| clip_box(x + d)).collect();
    let x = critic_input(s, &Tensor::new(a.shape().to_vec(), executed)?);
    if !grad {
        return Ok((q.predict(&x)?.into_data(), None));
    }
    let (y, tape) = q.forward(&x)?;
    let ones = Tensor::new(y.shape().to_vec(), vec![1.0; y.len()])?;
    let g = q.backward(&tape, &ones)?.input;
    let (ds, da) = (s.cols(), a.cols());
    let mut ga = Vec::with_capacity(a.len());
    for i in 0..s.rows() {
        ga.extend_from_slice(&g.row(i)[ds..ds + da]);
    }
    Ok((y.into_data(), Some(ga)))
}

/// Row-wise PGD toward the minimum of `q` over `||delta||_inf <= eps`.
///
/// Descent with sign steps of size `eta`, projection by clipping, and the
/// lowest-valued visited iterate (including `delta = 0`) kept per row.
pub fn pgd_min_delta_batch(q: &DenseNet, s: &Tensor, a: &Tensor, eps: f64, k: usize, eta: f64) -> Result<Tensor> {
    let (n, da) = (a.rows(), a.cols());
    let mut best = vec![0.0; n * da];
    if eps <= 0.0 || k == 0 {
        return Tensor::new(a.shape().to_vec(), best);
    }
    let mut delta = vec![0.0; n * da];
    let (mut vals, mut grad) = q_at(q, s, a, &delta, true)?;
    let mut best_val = vals.clone();
    for it in 0..k {
        let g = grad.expect("gradient requested");
        for (d, g) in delta.iter_mut().zip(&g) {
            let step = if *g > 0.0 {
                eta
            } else if *g < 0.0 {
                -eta
            } else {
                0.0
            };
            *d = (*d - step).clamp(-eps, eps);
        }
        let last = it + 1 == k;
        (vals, grad) = q_at(q, s, a, &delta, !last)?;
        for i in 0..n {
            if vals[i] < best_val[i] {
                best_val[i] = vals[i];
                best[i * da..(i + 1) * da].copy_from_slice(&delta[i * da..(i + 1) * da]);
            }
        }
    }
    Tensor::new(a.shape().to_vec(), best)
}

/// Single-state form of [`pgd_min_delta_batch`].
pub fn pgd_min_delta(q: &DenseNet, s: &[f64], a: &[f64], eps: f64, k: usize, eta: f64) -> Result<Vec<f64>> {
    let st = Tensor::new(vec![1, s.len()], s.to_vec())?;
    let at = Tensor::new(vec![1, a.len()], a.to_vec())?;
    Ok(pgd_min_delta_batch(q, &st, &at, eps, k, eta)?.into_data())
}

/// PCGrad-style combination of the nominal and adversarial gradients.
///
/// Without conflict (`g_q . g_adv >= 0`) this is `omega g_q + (1-omega) g_adv`;
/// otherwise each gradient is first projected onto the normal plane of the other.
pub fn gradient_surgery_combine(g_q: &Tensor, g_adv: &Tensor, omega: f64) -> Result<Tensor> {
    if g_q.shape() != g_adv.shape() {
        return Err(Error::Dimension {
            axis: "gradient pair",
            expected: g_q.len(),
            actual: g_adv.len(),
        });
    }
    let (out, _) = surgery(g_q.data(), g_adv.data(), omega);
    Tensor::new(g_q.shape().to_vec(), out)
}

/// Combined gradient and whether the pair conflicted.
pub(crate) fn surgery(g_q: &[f64], g_adv: &[f64], omega: f64) -> (Vec<f64>, bool) {
    let (nq, na) = (norm_sq(g_q), norm_sq(g_adv));
    if nq == 0.0 && na == 0.0 {
        return (vec![0.0; g_q.len()], false);
    }
    let d = dot(g_q, g_adv);
    if d >= 0.0 {
        return (convex(g_q, g_adv, omega), false);
    }
    // d < 0 implies both norms are positive
    let pq: Vec<f64> = g_q.iter().zip(g_adv).map(|(x, y)| x - d / na * y).collect();
    let pa: Vec<f64> = g_adv.iter().zip(g_q).map(|(y, x)| y - d / nq * x).collect();
    (convex(&pq, &pa, omega), true)
}

pub(crate) fn convex(a: &[f64], b: &[f64], omega: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| omega * x + (1.0 - omega) * y).collect()
}

pub(crate) fn optimizer(net: &DenseNet, lr: f64) -> AdamState {
    AdamState::new(net.n_params(), lr).with_blocks(net.param_blocks())
}

/// One Adam step of mean-squared-error regression of a scalar head onto
/// `targets`; returns the loss before the step.
pub(crate) fn regress(
    net: &mut DenseNet,
    opt: &mut AdamState,
    x: &Tensor,
    targets: &[f64],
    step: usize,
    what: &str,
) -> Result<f64> {
    let (y, tape) = net.forward(x)?;
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut up = Vec::with_capacity(targets.len());
    for (p, t) in y.data().iter().zip(targets) {
        let e = p - t;
        loss += e * e / n;
        up.push(2.0 * e / n);
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            quantity: what.to_string(),
        });
    }
    let g = net.backward(&tape, &Tensor::new(y.shape().to_vec(), up)?)?;
    opt.apply(net.params_mut(), g.params.data())
        .map_err(|e| annotate(e, step, what))?;
    Ok(loss)
}

fn annotate(e: Error, step: usize, what: &str) -> Error {
    match e {
        Error::NonFiniteGradient { block } => Error::NonFiniteLoss {
            step,
            quantity: format!("{what} gradient ({block})"),
        },
        other => other,
    }
}

/// Scale `g` so its Euclidean norm is at most `max_norm`.
pub(crate) fn clip_grad_norm(g: &mut [f64], max_norm: f64) {
    let n = norm_sq(g).sqrt();
    if n > max_norm {
        let k = max_norm / n;
        g.iter_mut().for_each(|x| *x *= k);
    }
}

/// One row of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// Environment steps taken when the episode ended.
    pub step: usize,
    pub episode: usize,
    pub nominal_return: f64,
    pub critic_loss: f64,
    pub oa_critic_loss: f64,
    /// Fraction of actor updates in the episode whose two gradients conflicted.
    pub conflict_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,episode,nominal_return,critic_loss,oa_critic_loss,conflict_rate\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.episode, r.nominal_return, r.critic_loss, r.oa_critic_loss, r.conflict_rate
            );
        }
        out
    }

    /// Mean nominal return over the last `n` episodes.
    pub fn tail_mean(&self, n: usize) -> Option<f64> {
        let k = n.min(self.rows.len());
        if k == 0 {
            return None;
        }
        Some(self.rows[self.rows.len() - k..].iter().map(|r| r.nominal_return).sum::<f64>() / k as f64)
    }
}

/// Running averages of per-update statistics within an episode.
#[derive(Debug, Default, Clone)]
pub(crate) struct EpisodeStats {
    critic: (f64, usize),
    oa_critic: (f64, usize),
    conflicts: (usize, usize),
}

impl EpisodeStats {
    pub fn critic(&mut self, v: f64) {
        self.critic.0 += v;
        self.critic.1 += 1;
    }

    pub fn oa_critic(&mut self, v: f64) {
        self.oa_critic.0 += v;
        self.oa_critic.1 += 1;
    }

    pub fn actor_update(&mut self, conflict: bool) {
        self.conflicts.0 += conflict as usize;
        self.conflicts.1 += 1;
    }

    pub fn row(&self, step: usize, episode: usize, nominal_return: f64) -> LogRow {
        let avg = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
        LogRow {
            step,
            episode,
            nominal_return,
            critic_loss: avg(self.critic),
            oa_critic_loss: avg(self.oa_critic),
            conflict_rate: if self.conflicts.1 == 0 {
                0.0
            } else {
                self.conflicts.0 as f64 / self.conflicts.1 as f64
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn bowl() -> DenseNet {
        // q(s, a) = relu(a) + relu(-a) = |a|, minimized at a = 0
        let w1 = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.0, -1.0]).unwrap();
        let b1 = Tensor::vector(vec![0.0, 0.0]);
        let w2 = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let b2 = Tensor::vector(vec![0.0]);
        DenseNet::from_layers(&[(w1, b1), (w2, b2)], &[Activation::Relu, Activation::Identity]).unwrap()
    }

    #[test]
    fn zero_budget_is_zero_delta() {
        let q = bowl();
        assert_eq!(pgd_min_delta(&q, &[0.3], &[0.5], 0.0, 16, 0.1).unwrap(), vec![0.0]);
    }

    #[test]
    fn pgd_walks_to_the_edge_of_the_ball() {
        let q = bowl();
        let d = pgd_min_delta(&q, &[0.0], &[0.5], 0.2, 16, 0.2 / 16.0).unwrap();
        assert!((d[0] + 0.2).abs() < 1e-12, "{d:?}");
    }

    #[test]
    fn surgery_hand_case() {
        let g = gradient_surgery_combine(&Tensor::vector(vec![1.0, 0.0]), &Tensor::vector(vec![-1.0, 1.0]), 0.5).unwrap();
        assert_eq!(g.data(), &[0.25, 0.75]);
        let same = Tensor::vector(vec![0.3, -2.0]);
        assert_eq!(gradient_surgery_combine(&same, &same, 0.7).unwrap(), same);
        assert!(gradient_surgery_combine(&same, &Tensor::vector(vec![1.0]), 0.5).is_err());
        let z = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(gradient_surgery_combine(&z, &z, 0.5).unwrap(), z);
    }

    #[test]
    fn replay_ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3, 0);
        for i in 0..5 {
            buf.push(Transition {
                s: vec![i as f64],
                a: vec![0.0],
                r: i as f64,
                s_next: vec![0.0],
                d: false,
            });
        }
        assert_eq!(buf.len(), 3);
        let rs: Vec<f64> = buf.items.iter().map(|t| t.r).collect();
        assert_eq!(rs, vec![3.0, 4.0, 2.0]);
        let b = buf.sample(1000).unwrap();
        for v in [2.0, 3.0, 4.0] {
            let c = b.r.iter().filter(|&&r| r == v).count();
            assert!((250..420).contains(&c), "{v}: {c}");
        }
    }

    #[test]
    fn log_csv_header() {
        let log = TrainLog::default();
        assert_eq!(log.to_csv(), "step,episode,nominal_return,critic_loss,oa_critic_loss,conflict_rate\n");
        assert_eq!(log.tail_mean(10), None);
    }
}
