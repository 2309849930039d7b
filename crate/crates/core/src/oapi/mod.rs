//! Exact optimal-adversary-aware policy evaluation, improvement and iteration
//! on finite AA-MDPs, plus the adversary-MDP and brute-force maximin oracles.
//!
//! The adversary picks one offset per state *before* the agent's action is
//! sampled, so the minimum sits outside the expectation over `pi`:
//!
//! ```text
//! (T q)(s, a) = R(s, a) + gamma * sum_s' P(s'|s, a) * min_k sum_a' pi(a'|s') q(s', shift(a', k))
//! ```

mod adversary;

pub use adversary::{
    adversary_oracle, build_adversary_mdp, distinct_actions, exhaustive_maximin, AdversaryMdp, AdversaryPolicy,
    MaximinResult, ENUMERATION_LIMIT,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::bellman::{argmax_lowest, backup_with_values, check_q, fixed_point};
use crate::mdp::{FiniteAAMdp, QTable, TabularPolicy};

/// One row of a policy-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// `E_{s ~ rho}[V(s)]` of the policy evaluated at this iteration.
    pub objective: f64,
    pub policy_changed: bool,
    /// Per-state values behind `objective`.
    pub values: Vec<f64>,
}

impl TraceEntry {
    pub(crate) fn new(iteration: usize, values: &[f64], rho: &[f64], policy_changed: bool) -> Self {
        TraceEntry {
            iteration,
            objective: expectation(rho, values),
            policy_changed,
            values: values.to_vec(),
        }
    }
}

/// CSV rendering `iteration,objective,policy_changed`.
pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut out = String::from("iteration,objective,policy_changed\n");
    for e in trace {
        out.push_str(&format!("{},{},{}\n", e.iteration, e.objective, e.policy_changed));
    }
    out
}

pub(crate) fn expectation(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Worst-case offset for `s` and the resulting value `min_k E_{a~pi} q(s, shift(a, k))`.
/// Ties go to the lowest offset index.
pub fn worst_case_offset(q: &QTable, pi: &TabularPolicy, mdp: &FiniteAAMdp, s: usize) -> (usize, f64) {
    let support = pi.support(s);
    let mut best = (0, f64::INFINITY);
    for k in 0..mdp.n_offsets() {
        let v: f64 = support.iter().map(|&(a, p)| p * q.get(s, mdp.shift(a, k))).sum();
        if v < best.1 {
            best = (k, v);
        }
    }
    best
}

/// `V_{pi o nu*}(s)` read off a Q_adv table.
pub fn worst_case_values(q: &QTable, pi: &TabularPolicy, mdp: &FiniteAAMdp) -> Vec<f64> {
    (0..mdp.n_states())
        .map(|s| worst_case_offset(q, pi, mdp, s).1)
        .collect()
}

/// One application of the optimal-adversary-aware Bellman operator.
pub fn oa_bellman_backup(q_adv: &QTable, pi: &TabularPolicy, mdp: &FiniteAAMdp) -> Result<QTable> {
    check_q(q_adv, mdp)?;
    pi.check_against(mdp.n_states(), mdp.n_actions())?;
    Ok(backup_with_values(mdp, &worst_case_values(q_adv, pi, mdp)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OaEvaluation {
    pub q_adv: QTable,
    /// `V_{pi o nu*}` per state.
    pub values: Vec<f64>,
}

/// Fixed point of [`oa_bellman_backup`] from `q = 0`.
pub fn oa_policy_evaluation(pi: &TabularPolicy, mdp: &FiniteAAMdp, tol: f64) -> Result<OaEvaluation> {
    pi.check_against(mdp.n_states(), mdp.n_actions())?;
    let q_adv = fixed_point(mdp, tol, |q| {
        backup_with_values(mdp, &worst_case_values(q, pi, mdp))
    })?;
    let values = worst_case_values(&q_adv, pi, mdp);
    Ok(OaEvaluation { q_adv, values })
}

/// `min_k q(s, shift(a, k))`, the value of committing to `a` in `s`.
pub fn maximin_action_value(q_adv: &QTable, mdp: &FiniteAAMdp, s: usize, a: usize) -> f64 {
    (0..mdp.n_offsets())
        .map(|k| q_adv.get(s, mdp.shift(a, k)))
        .fold(f64::INFINITY, f64::min)
}

/// `pi'(s) = argmax_a min_k q_adv(s, shift(a, k))`, ties to the lowest index.
pub fn oa_policy_improvement(q_adv: &QTable, mdp: &FiniteAAMdp) -> TabularPolicy {
    TabularPolicy::Deterministic(
        (0..mdp.n_states())
            .map(|s| argmax_lowest((0..mdp.n_actions()).map(|a| maximin_action_value(q_adv, mdp, s, a))))
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct OaPolicyIteration {
    pub policy: TabularPolicy,
    pub q_adv: QTable,
    pub trace: Vec<TraceEntry>,
}

impl OaPolicyIteration {
    pub fn objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |e| e.objective)
    }
}

/// Alternate OA-aware evaluation and maximin improvement until the policy is stable.
///
/// Starts from the all-zeros deterministic policy. The trace records
/// `E_rho[V_{pi_k o nu*}]` for every evaluated policy.
pub fn oa_policy_iteration(mdp: &FiniteAAMdp, tol: f64, max_iters: usize) -> Result<OaPolicyIteration> {
    if max_iters == 0 {
        return Err(Error::InvalidModel("max_iters must be at least 1".into()));
    }
    let mut policy = TabularPolicy::Deterministic(vec![0; mdp.n_states()]);
    let mut trace = Vec::new();
    for iteration in 0..max_iters {
        let eval = oa_policy_evaluation(&policy, mdp, tol)?;
        let next = oa_policy_improvement(&eval.q_adv, mdp);
        let changed = next != policy;
        trace.push(TraceEntry::new(iteration, &eval.values, mdp.rho(), changed));
        if !changed {
            return Ok(OaPolicyIteration {
                policy,
                q_adv: eval.q_adv,
                trace,
            });
        }
        policy = next;
    }
    Err(Error::NonConvergence { max_iters, trace })
}

/// Residual of the maximin optimality equation
/// `Q(s,a) = R(s,a) + gamma * E_{s'}[max_a' min_k Q(s', shift(a', k))]`.
pub fn maximin_residual(q_adv: &QTable, mdp: &FiniteAAMdp) -> f64 {
    let best: Vec<f64> = (0..mdp.n_states())
        .map(|s| {
            (0..mdp.n_actions())
                .map(|a| maximin_action_value(q_adv, mdp, s, a))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    backup_with_values(mdp, &best).sup_distance(q_adv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{bellman_backup, greedy_improve, policy_evaluation, policy_iteration, MdpDocument};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::mdp::random::{random_instance, random_policy, random_q};

    /// Two states, three actions on {-1, 0, 1}.
    fn three_action_line(eps: f64) -> FiniteAAMdp {
        FiniteAAMdp::from_document(MdpDocument {
            n_states: 2,
            gamma: 0.9,
            epsilon: eps,
            action_embeddings: vec![vec![-1.0], vec![0.0], vec![1.0]],
            transition: vec![
                vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]],
                vec![vec![0.2, 0.8], vec![0.0, 1.0], vec![1.0, 0.0]],
            ],
            reward: vec![vec![1.0, 0.0, -1.0], vec![0.5, 2.0, -0.5]],
            rho: vec![1.0, 0.0],
        })
        .unwrap()
    }

    #[test]
    fn zero_epsilon_matches_plain_backup() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = random_instance(&mut rng, 8, 4).with_epsilon(0.0).unwrap();
            let pi = random_policy(&mut rng, &m, true);
            let q = random_q(&mut rng, &m, 5.0);
            let a = oa_bellman_backup(&q, &pi, &m).unwrap();
            let b = bellman_backup(&q, &pi, &m).unwrap();
            assert!(a.sup_distance(&b) <= 1e-12);
        }
    }

    #[test]
    fn hand_checked_entry_full_reach() {
        // eps = 2 reaches every action from every action
        let m = three_action_line(2.0);
        let pi = TabularPolicy::Deterministic(vec![1, 1]);
        let q = QTable::from_rows(vec![vec![3.0, 1.0, 2.0], vec![4.0, 6.0, -2.0]]).unwrap();
        let out = oa_bellman_backup(&q, &pi, &m).unwrap();
        // min over state 0 row = 1, state 1 row = -2
        // (s=0, a=1): 0 + 0.9 * (0.5 * 1 + 0.5 * -2) = -0.45
        assert!((out.get(0, 1) - (-0.45)).abs() < 1e-15);
        // (s=1, a=0): 0.5 + 0.9 * (0.2 * 1 + 0.8 * -2) = -0.76
        assert!((out.get(1, 0) - (-0.76)).abs() < 1e-15);
    }

    #[test]
    fn shared_offset_not_per_action_min() {
        // stochastic pi over actions {0, 2} with eps = 1: the adversary must pick one
        // offset for both sampled actions, so the result differs from averaging per-action minima.
        let m = three_action_line(1.0);
        let pi = TabularPolicy::stochastic(vec![vec![0.5, 0.0, 0.5], vec![0.5, 0.0, 0.5]]).unwrap();
        let q = QTable::from_rows(vec![vec![0.0, 10.0, 0.0], vec![0.0, 10.0, 0.0]]).unwrap();
        let v = worst_case_values(&q, &pi, &m);
        // offset 0 -> 0; offset -1 -> actions {0, 1} -> 5; offset +1 -> {1, 2} -> 5
        assert_eq!(v, vec![0.0, 0.0]);
        let q2 = QTable::from_rows(vec![vec![1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0]]).unwrap();
        // per-action minima would give 0, the shared offset can only reach 0.5
        assert_eq!(worst_case_values(&q2, &pi, &m), vec![0.5, 0.5]);
    }

    #[test]
    fn adversary_never_helps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let m = random_instance(&mut rng, 6, 4);
            let pi = random_policy(&mut rng, &m, true);
            let oa = oa_policy_evaluation(&pi, &m, 1e-12).unwrap();
            let nominal = policy_evaluation(&pi, &m, 1e-12).unwrap();
            let v = crate::mdp::state_values(&nominal, &pi);
            for s in 0..m.n_states() {
                assert!(oa.values[s] <= v[s] + 1e-9);
            }
        }
    }

    #[test]
    fn maximin_not_max() {
        // action 0 reaches {0, 1}, action 2 reaches {1, 2}; eps = 1
        let m = three_action_line(1.0);
        let q = QTable::from_rows(vec![vec![10.0, 1.0, 5.0], vec![10.0, 4.0, 5.0]]).unwrap();
        // state 0: a0 -> min(10, 1) = 1, a1 -> 1, a2 -> min(1, 5) = 1 -> tie -> 0
        // state 1: a0 -> 4, a1 -> 4, a2 -> 4 -> 0
        assert_eq!(oa_policy_improvement(&q, &m), TabularPolicy::Deterministic(vec![0, 0]));
        let m2 = FiniteAAMdp::from_document(MdpDocument {
            n_states: 1,
            gamma: 0.5,
            epsilon: 1.0,
            action_embeddings: vec![vec![-1.0], vec![1.0], vec![0.0], vec![-0.5]],
            transition: vec![vec![vec![1.0]; 4]],
            reward: vec![vec![0.0; 4]],
            rho: vec![1.0],
        })
        .unwrap();
        // action 0 = -1 reaches {-1, 0, -0.5}; action 1 = 1 reaches {1, 0}
        let q = QTable::from_rows(vec![vec![10.0, 5.0, 4.0, 1.0]]).unwrap();
        assert_eq!(maximin_action_value(&q, &m2, 0, 0), 1.0);
        assert_eq!(maximin_action_value(&q, &m2, 0, 1), 4.0);
        assert_eq!(oa_policy_improvement(&q, &m2), TabularPolicy::Deterministic(vec![1]));
    }

    #[test]
    fn zero_epsilon_improvement_is_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = random_instance(&mut rng, 6, 5).with_epsilon(0.0).unwrap();
            let q = random_q(&mut rng, &m, 1.0);
            assert_eq!(oa_policy_improvement(&q, &m), greedy_improve(&q));
        }
    }

    #[test]
    fn zero_epsilon_iteration_matches_vanilla() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let m = random_instance(&mut rng, 8, 4).with_epsilon(0.0).unwrap();
            let oa = oa_policy_iteration(&m, 1e-12, 200).unwrap();
            let pi = policy_iteration(&m, 1e-12, 200).unwrap();
            assert_eq!(oa.policy, pi.policy);
            assert!(oa.q_adv.sup_distance(&pi.q) <= 1e-10);
        }
    }

    #[test]
    fn trace_is_monotone_and_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..40 {
            let m = random_instance(&mut rng, 8, 4);
            let run = oa_policy_iteration(&m, 1e-12, 200).unwrap();
            for w in run.trace.windows(2) {
                assert!(w[1].objective >= w[0].objective - 1e-10);
                for s in 0..m.n_states() {
                    assert!(w[1].values[s] >= w[0].values[s] - 1e-10);
                }
            }
            assert!(!run.trace.last().unwrap().policy_changed);
            assert!(maximin_residual(&run.q_adv, &m) < 1e-9);
        }
    }

    #[test]
    fn non_convergence_carries_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // find an instance that needs more than one iteration
        loop {
            let m = random_instance(&mut rng, 6, 4);
            let full = oa_policy_iteration(&m, 1e-12, 100).unwrap();
            if full.trace.len() > 1 {
                match oa_policy_iteration(&m, 1e-12, 1) {
                    Err(Error::NonConvergence { max_iters: 1, trace }) => assert_eq!(trace.len(), 1),
                    other => panic!("unexpected {other:?}"),
                }
                break;
            }
        }
    }

    #[test]
    fn trace_csv_header() {
        let t = vec![TraceEntry::new(0, &[1.0, 2.0], &[0.5, 0.5], false)];
        assert_eq!(trace_csv(&t), "iteration,objective,policy_changed\n0,1.5,false\n");
    }
}
