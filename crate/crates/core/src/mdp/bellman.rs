use crate::error::{Error, Result};
use crate::oapi::TraceEntry;

use super::{FiniteAAMdp, QTable, TabularPolicy};

/// Sweeps allowed before a fixed-point iteration is declared divergent.
pub(crate) const MAX_SWEEPS: usize = 10_000_000;

/// Relative slack under which two action values count as tied.
pub(crate) const TIE_SLACK: f64 = 1e-12;

/// Lowest index whose value is within [`TIE_SLACK`] of the maximum.
pub(crate) fn argmax_lowest(values: impl Iterator<Item = f64> + Clone) -> usize {
    let best = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let slack = TIE_SLACK * best.abs().max(1.0);
    values
        .enumerate()
        .find(|(_, v)| *v >= best - slack)
        .map_or(0, |(i, _)| i)
}

pub(crate) fn check_q(q: &QTable, mdp: &FiniteAAMdp) -> Result<()> {
    if q.n_states() != mdp.n_states() {
        return Err(Error::Dimension {
            axis: "q states",
            expected: mdp.n_states(),
            actual: q.n_states(),
        });
    }
    if q.n_actions() != mdp.n_actions() {
        return Err(Error::Dimension {
            axis: "q actions",
            expected: mdp.n_actions(),
            actual: q.n_actions(),
        });
    }
    Ok(())
}

/// `V(s) = sum_a pi(a|s) q(s, a)`.
pub fn state_values(q: &QTable, pi: &TabularPolicy) -> Vec<f64> {
    (0..q.n_states())
        .map(|s| pi.support(s).iter().map(|&(a, p)| p * q.get(s, a)).sum())
        .collect()
}

/// `R + gamma * P v`, the common tail of every backup in this crate.
pub(crate) fn backup_with_values(mdp: &FiniteAAMdp, next_values: &[f64]) -> QTable {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut out = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let cont: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(next_values)
                .map(|(p, v)| p * v)
                .sum();
            out.push(mdp.reward(s, a) + mdp.gamma() * cont);
        }
    }
    QTable::from_flat(ns, na, out)
}

/// One application of the policy Bellman operator.
pub fn bellman_backup(q: &QTable, pi: &TabularPolicy, mdp: &FiniteAAMdp) -> Result<QTable> {
    check_q(q, mdp)?;
    pi.check_against(mdp.n_states(), mdp.n_actions())?;
    Ok(backup_with_values(mdp, &state_values(q, pi)))
}

/// Iterate `backup` from `q = 0` until the sup-norm step drops below `tol`.
pub(crate) fn fixed_point(
    mdp: &FiniteAAMdp,
    tol: f64,
    mut backup: impl FnMut(&QTable) -> QTable,
) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::InvalidModel(format!("tolerance must be positive, got {tol}")));
    }
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    for sweep in 1..=MAX_SWEEPS {
        let next = backup(&q);
        let step = next.sup_distance(&q);
        if !step.is_finite() || next.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iterations: sweep,
                last_step: step,
            });
        }
        q = next;
        if step < tol {
            return Ok(q);
        }
    }
    Err(Error::Divergence {
        iterations: MAX_SWEEPS,
        last_step: f64::NAN,
    })
}

pub fn policy_evaluation(pi: &TabularPolicy, mdp: &FiniteAAMdp, tol: f64) -> Result<QTable> {
    pi.check_against(mdp.n_states(), mdp.n_actions())?;
    fixed_point(mdp, tol, |q| backup_with_values(mdp, &state_values(q, pi)))
}

/// Deterministic greedy policy; ties go to the lowest action index.
pub fn greedy_improve(q: &QTable) -> TabularPolicy {
    TabularPolicy::Deterministic(
        (0..q.n_states())
            .map(|s| argmax_lowest(q.row(s).iter().copied()))
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct PolicyIterationResult {
    pub policy: TabularPolicy,
    pub q: QTable,
    pub trace: Vec<TraceEntry>,
}

/// Vanilla policy iteration, starting from the all-zeros policy.
pub fn policy_iteration(mdp: &FiniteAAMdp, tol: f64, max_iters: usize) -> Result<PolicyIterationResult> {
    if max_iters == 0 {
        return Err(Error::InvalidModel("max_iters must be at least 1".into()));
    }
    let mut policy = TabularPolicy::Deterministic(vec![0; mdp.n_states()]);
    let mut trace = Vec::new();
    for iteration in 0..max_iters {
        let q = policy_evaluation(&policy, mdp, tol)?;
        let values = state_values(&q, &policy);
        let next = greedy_improve(&q);
        let changed = next != policy;
        trace.push(TraceEntry::new(iteration, &values, mdp.rho(), changed));
        if !changed {
            return Ok(PolicyIterationResult { policy, q, trace });
        }
        policy = next;
    }
    Err(Error::NonConvergence { max_iters, trace })
}
