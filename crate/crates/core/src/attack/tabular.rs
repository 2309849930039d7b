//! Exact attack semantics on finite models: the distribution over executed
//! actions each attack induces, and the values that follow from it.
//!
//! The model passed in must already carry the attack's budget as its epsilon.
//! Random draws one of the shared offsets uniformly (the finite stand-in for
//! a uniform draw from the ball); biggest draws a uniform corner of the ball
//! and snaps it into `N_eps(a)`.

use super::{AttackKind, CriticMode};
use crate::error::{Error, Result};
use crate::mdp::{policy_evaluation, state_values, FiniteAAMdp, QTable, TabularPolicy};
use crate::oapi::oa_policy_evaluation;

const EXACT_TOL: f64 = 1e-13;

/// Offset minimizing `q(s, shift(a, k))`, lowest index on ties.
pub(crate) fn min_offset(m: &FiniteAAMdp, q: &QTable, s: usize, a: usize) -> usize {
    let mut best = (0, f64::INFINITY);
    for k in 0..m.n_offsets() {
        let v = q.get(s, m.shift(a, k));
        if v < best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// `P(executed = b | s, a)` under `kind`, as `(b, p)` pairs in action order.
pub fn executed_distribution(
    m: &FiniteAAMdp,
    kind: AttackKind,
    table: Option<&QTable>,
    s: usize,
    a: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut p = vec![0.0; m.n_actions()];
    match kind {
        AttackKind::Nominal => p[a] = 1.0,
        AttackKind::Random => {
            let w = 1.0 / m.n_offsets() as f64;
            for k in 0..m.n_offsets() {
                p[m.shift(a, k)] += w;
            }
        }
        AttackKind::Biggest => {
            let d = m.action_dim();
            let w = 0.5f64.powi(d as i32);
            for bits in 0..1usize << d {
                let corner: Vec<f64> = (0..d)
                    .map(|i| if bits >> i & 1 == 1 { m.epsilon() } else { -m.epsilon() })
                    .collect();
                p[m.perturbed_action(a, &corner)] += w;
            }
        }
        AttackKind::MinQ | AttackKind::MinOaQ => {
            let q = table.ok_or_else(|| Error::Config(format!("attack {kind} needs a critic table")))?;
            p[m.shift(a, min_offset(m, q, s, a))] = 1.0;
        }
    }
    Ok(p.into_iter().enumerate().filter(|(_, w)| *w > 0.0).collect())
}

/// Exact per-state values of `pi` when every executed action is drawn from
/// the attack's distribution (a Markov chain, so no sampling noise).
pub fn exact_attack_values(m: &FiniteAAMdp, pi: &TabularPolicy, kind: AttackKind, table: Option<&QTable>) -> Result<Vec<f64>> {
    let mut rows = vec![vec![0.0; m.n_actions()]; m.n_states()];
    for (s, row) in rows.iter_mut().enumerate() {
        for (a, pa) in pi.support(s) {
            for (b, pb) in executed_distribution(m, kind, table, s, a)? {
                row[b] += pa * pb;
            }
        }
    }
    let sigma = TabularPolicy::stochastic(rows)?;
    let q = policy_evaluation(&sigma, m, EXACT_TOL)?;
    Ok(state_values(&q, &sigma))
}

/// The critic a gradient attack consults on a tabular policy: `Q^pi` for
/// Min-Q, the fixed point `Q_adv^pi` for Min-OA-Q.
pub fn tabular_critic(m: &FiniteAAMdp, pi: &TabularPolicy, mode: CriticMode) -> Result<QTable> {
    match mode {
        CriticMode::Standard => policy_evaluation(pi, m, EXACT_TOL),
        CriticMode::Oa => Ok(oa_policy_evaluation(pi, m, EXACT_TOL)?.q_adv),
    }
}
