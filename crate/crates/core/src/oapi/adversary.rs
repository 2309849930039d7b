//! The adversary's view of an AA-MDP: with `pi` folded into the environment,
//! finding the optimal perturbation policy is ordinary policy iteration.

use crate::error::{Error, Result};
use crate::mdp::{policy_iteration, state_values, FiniteAAMdp, MdpDocument, TabularPolicy};

use super::expectation;

/// Largest policy count `exhaustive_maximin` will enumerate.
pub const ENUMERATION_LIMIT: u128 = 100_000;

const ORACLE_TOL: f64 = 1e-12;
const ORACLE_MAX_ITERS: usize = 10_000;

/// MDP whose actions are perturbation offsets of the underlying AA-MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryMdp {
    /// Offsets as actions, unperturbable (`epsilon = 0`).
    pub mdp: FiniteAAMdp,
    /// Offset vector behind each adversary action.
    pub offsets: Vec<Vec<f64>>,
}

/// Deterministic offset index per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversaryPolicy {
    pub offsets: Vec<usize>,
}

/// `P_nu(s'|s,k) = E_{a~pi}[P(s'|s, shift(a,k))]`, `R_nu(s,k) = -E_{a~pi}[R(s, shift(a,k))]`.
pub fn build_adversary_mdp(mdp: &FiniteAAMdp, pi: &TabularPolicy) -> Result<AdversaryMdp> {
    pi.check_against(mdp.n_states(), mdp.n_actions())?;
    let (ns, n_off) = (mdp.n_states(), mdp.n_offsets());
    let mut transition = Vec::with_capacity(ns);
    let mut reward = Vec::with_capacity(ns);
    for s in 0..ns {
        let support = pi.support(s);
        let mut p_rows = Vec::with_capacity(n_off);
        let mut r_row = Vec::with_capacity(n_off);
        for k in 0..n_off {
            let mut row = vec![0.0; ns];
            let mut r = 0.0;
            for &(a, p) in &support {
                let executed = mdp.shift(a, k);
                r += p * mdp.reward(s, executed);
                for (acc, t) in row.iter_mut().zip(mdp.transition_row(s, executed)) {
                    *acc += p * t;
                }
            }
            p_rows.push(row);
            r_row.push(-r);
        }
        transition.push(p_rows);
        reward.push(r_row);
    }
    // Adversary actions carry placeholder 1-D embeddings; with epsilon = 0 they never interact.
    let action_embeddings = (0..n_off)
        .map(|k| {
            if n_off == 1 {
                vec![0.0]
            } else {
                vec![-1.0 + 2.0 * k as f64 / (n_off - 1) as f64]
            }
        })
        .collect();
    let adv = FiniteAAMdp::from_document(MdpDocument {
        n_states: ns,
        gamma: mdp.gamma(),
        epsilon: 0.0,
        action_embeddings,
        transition,
        reward,
        rho: mdp.rho().to_vec(),
    })?;
    Ok(AdversaryMdp {
        mdp: adv,
        offsets: mdp.offsets().to_vec(),
    })
}

/// Optimal adversary for `pi` by solving the adversary MDP, and the agent's
/// resulting per-state value `V_{pi o nu*}`.
pub fn adversary_oracle(mdp: &FiniteAAMdp, pi: &TabularPolicy, tol: f64) -> Result<(AdversaryPolicy, Vec<f64>)> {
    let adv = build_adversary_mdp(mdp, pi)?;
    let solved = policy_iteration(&adv.mdp, tol, ORACLE_MAX_ITERS)?;
    let values = state_values(&solved.q, &solved.policy)
        .into_iter()
        .map(|v| -v)
        .collect();
    let offsets = solved
        .policy
        .as_deterministic()
        .expect("policy iteration yields deterministic policies")
        .to_vec();
    Ok((AdversaryPolicy { offsets }, values))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaximinResult {
    pub policy: TabularPolicy,
    /// `E_rho[V_{pi o nu*}]` of `policy`.
    pub objective: f64,
    pub values: Vec<f64>,
    pub enumerated: u128,
}

/// Representative actions per state: two actions are interchangeable when,
/// under every offset, their executed actions share reward and transition row.
/// Swapping one for the other leaves the adversary MDP unchanged.
pub fn distinct_actions(mdp: &FiniteAAMdp) -> Vec<Vec<usize>> {
    (0..mdp.n_states())
        .map(|s| {
            let mut reps: Vec<usize> = Vec::new();
            for a in 0..mdp.n_actions() {
                let same = |b: usize| {
                    (0..mdp.n_offsets()).all(|k| {
                        let (x, y) = (mdp.shift(a, k), mdp.shift(b, k));
                        mdp.reward(s, x) == mdp.reward(s, y) && mdp.transition_row(s, x) == mdp.transition_row(s, y)
                    })
                };
                if !reps.iter().any(|&b| same(b)) {
                    reps.push(a);
                }
            }
            reps
        })
        .collect()
}

/// Brute-force `max_pi min_nu E_rho[V]` over deterministic agent policies.
///
/// Only [`distinct_actions`] are tried in each state. Policies are enumerated
/// in lexicographic order (state 0 most significant); the first policy
/// attaining the best objective (up to 1e-12 relative) wins.
pub fn exhaustive_maximin(mdp: &FiniteAAMdp) -> Result<MaximinResult> {
    let choices = distinct_actions(mdp);
    let count = choices
        .iter()
        .try_fold(1u128, |acc, c| acc.checked_mul(c.len() as u128))
        .unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let ns = mdp.n_states();
    let mut digits = vec![0usize; ns];
    let mut best: Option<MaximinResult> = None;
    loop {
        let pi = TabularPolicy::Deterministic(digits.iter().zip(&choices).map(|(&d, c)| c[d]).collect());
        let (_, values) = adversary_oracle(mdp, &pi, ORACLE_TOL)?;
        let objective = expectation(mdp.rho(), &values);
        let better = match &best {
            None => true,
            Some(b) => objective > b.objective + 1e-12 * b.objective.abs().max(1.0),
        };
        if better {
            best = Some(MaximinResult {
                policy: pi,
                objective,
                values,
                enumerated: count,
            });
        }
        // odometer, last state fastest
        let mut i = ns;
        loop {
            if i == 0 {
                return Ok(best.expect("at least one policy"));
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < choices[i].len() {
                break;
            }
            digits[i] = 0;
        }
    }
}
