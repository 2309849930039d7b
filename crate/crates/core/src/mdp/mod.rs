//! Finite action-adversarial MDPs and the standard Bellman machinery.
//!
//! Actions live on a finite set of embeddings in `[-1, 1]^d`. An adversary of
//! strength `epsilon` may replace action `a` by any `a'` whose embedding lies
//! within l-infinity distance `epsilon` of `a`'s; that set is the neighborhood
//! `N_eps(a)`. Perturbations are indexed by a shared list of *offsets* so one
//! perturbation index applies to every action (see [`FiniteAAMdp::shift`]).

pub(crate) mod bellman;
mod policy;
pub mod random;

pub use bellman::{
    bellman_backup, greedy_improve, policy_evaluation, policy_iteration, state_values,
    PolicyIterationResult,
};
pub use policy::{QTable, TabularPolicy};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack applied when testing `||e(a') - e(a)||_inf <= epsilon`.
pub const NEIGHBORHOOD_SLACK: f64 = 1e-12;
/// Allowed deviation of probability rows from 1.
pub const PROBABILITY_SLACK: f64 = 1e-12;

/// On-disk form of a [`FiniteAAMdp`]. Neighborhoods are derived, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub n_states: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub action_embeddings: Vec<Vec<f64>>,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteAAMdp {
    n_states: usize,
    n_actions: usize,
    action_dim: usize,
    gamma: f64,
    epsilon: f64,
    embeddings: Vec<Vec<f64>>,
    // [s][a][s'] flattened
    transition: Vec<f64>,
    // [s][a] flattened
    reward: Vec<f64>,
    rho: Vec<f64>,
    neighborhoods: Vec<Vec<usize>>,
    offsets: Vec<Vec<f64>>,
    // [a][k] flattened: action reached from `a` under offset `k`
    shift: Vec<usize>,
}

impl FiniteAAMdp {
    pub fn from_document(doc: MdpDocument) -> Result<Self> {
        let MdpDocument {
            n_states,
            gamma,
            epsilon,
            action_embeddings,
            transition,
            reward,
            rho,
        } = doc;

        if n_states == 0 {
            return Err(Error::InvalidModel("n_states must be positive".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidModel(format!("gamma {gamma} outside [0, 1)")));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidModel(format!("epsilon {epsilon} must be finite and >= 0")));
        }
        let n_actions = action_embeddings.len();
        if n_actions == 0 {
            return Err(Error::InvalidModel("at least one action is required".into()));
        }
        let action_dim = action_embeddings[0].len();
        if action_dim == 0 {
            return Err(Error::InvalidModel("action embeddings must be non-empty".into()));
        }
        for (a, e) in action_embeddings.iter().enumerate() {
            expect_len("action_embeddings[a]", action_dim, e.len())?;
            if e.iter().any(|x| !(-1.0..=1.0).contains(x)) {
                return Err(Error::InvalidModel(format!(
                    "embedding of action {a} leaves [-1, 1]^d"
                )));
            }
        }

        expect_len("transition (states)", n_states, transition.len())?;
        expect_len("reward (states)", n_states, reward.len())?;
        expect_len("rho", n_states, rho.len())?;

        let mut flat_p = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, rows) in transition.iter().enumerate() {
            expect_len("transition (actions)", n_actions, rows.len())?;
            for (a, row) in rows.iter().enumerate() {
                expect_len("transition (next states)", n_states, row.len())?;
                check_distribution(row, &format!("transition[{s}][{a}]"))?;
                flat_p.extend_from_slice(row);
            }
        }
        let mut flat_r = Vec::with_capacity(n_states * n_actions);
        for (s, row) in reward.iter().enumerate() {
            expect_len("reward (actions)", n_actions, row.len())?;
            if row.iter().any(|r| !r.is_finite()) {
                return Err(Error::InvalidModel(format!("non-finite reward in state {s}")));
            }
            flat_r.extend_from_slice(row);
        }
        check_distribution(&rho, "rho")?;

        let mut mdp = FiniteAAMdp {
            n_states,
            n_actions,
            action_dim,
            gamma,
            epsilon,
            embeddings: action_embeddings,
            transition: flat_p,
            reward: flat_r,
            rho,
            neighborhoods: Vec::new(),
            offsets: Vec::new(),
            shift: Vec::new(),
        };
        mdp.derive_perturbations();
        Ok(mdp)
    }

    pub fn to_document(&self) -> MdpDocument {
        let transition = (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| self.transition_row(s, a).to_vec())
                    .collect()
            })
            .collect();
        let reward = (0..self.n_states)
            .map(|s| self.reward[s * self.n_actions..(s + 1) * self.n_actions].to_vec())
            .collect();
        MdpDocument {
            n_states: self.n_states,
            gamma: self.gamma,
            epsilon: self.epsilon,
            action_embeddings: self.embeddings.clone(),
            transition,
            reward,
            rho: self.rho.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        Self::from_document(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("document serializes")
    }

    /// Same model under a different perturbation strength.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut doc = self.to_document();
        doc.epsilon = epsilon;
        Self::from_document(doc)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn embedding(&self, a: usize) -> &[f64] {
        &self.embeddings[a]
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Ordered `N_eps(a)`.
    pub fn neighborhood(&self, a: usize) -> &[usize] {
        &self.neighborhoods[a]
    }

    /// Shared perturbation offsets; index 0 is always the zero offset.
    pub fn offsets(&self) -> &[Vec<f64>] {
        &self.offsets
    }

    pub fn n_offsets(&self) -> usize {
        self.offsets.len()
    }

    /// Action executed when the agent picks `a` and the adversary applies offset `k`.
    pub fn shift(&self, a: usize, k: usize) -> usize {
        self.shift[a * self.offsets.len() + k]
    }

    /// Action executed when the agent picks `a` and the continuous perturbation
    /// `delta` is applied: the member of `N_eps(a)` nearest to `clip(e(a) + delta)`.
    pub fn perturbed_action(&self, a: usize, delta: &[f64]) -> usize {
        let target: Vec<f64> = self.embeddings[a]
            .iter()
            .zip(delta)
            .map(|(x, d)| (x + d).clamp(-1.0, 1.0))
            .collect();
        nearest_among(&self.embeddings, self.neighborhoods[a].iter().copied(), &target)
    }

    /// Absorbing, reward-free state (goal or failure sink).
    pub fn is_terminal(&self, s: usize) -> bool {
        (0..self.n_actions).all(|a| self.reward(s, a) == 0.0 && self.transition_row(s, a)[s] == 1.0)
    }

    /// Index of the action whose embedding is closest (Euclidean) to `x`; ties go to the lowest index.
    pub fn nearest_action(&self, x: &[f64]) -> usize {
        nearest_among(&self.embeddings, 0..self.n_actions, x)
    }

    fn derive_perturbations(&mut self) {
        let eps = self.epsilon + NEIGHBORHOOD_SLACK;
        self.neighborhoods = (0..self.n_actions)
            .map(|a| {
                (0..self.n_actions)
                    .filter(|&b| linf(&self.embeddings[a], &self.embeddings[b]) <= eps)
                    .collect()
            })
            .collect();

        let mut offsets: Vec<Vec<f64>> = vec![vec![0.0; self.action_dim]];
        for a in 0..self.n_actions {
            for &b in &self.neighborhoods[a] {
                let d: Vec<f64> = self.embeddings[b]
                    .iter()
                    .zip(&self.embeddings[a])
                    .map(|(y, x)| y - x)
                    .collect();
                if !offsets.iter().any(|o| linf(o, &d) <= NEIGHBORHOOD_SLACK) {
                    offsets.push(d);
                }
            }
        }
        offsets[1..].sort_by(|x, y| x.partial_cmp(y).expect("finite offsets"));
        self.offsets = offsets;

        let n_off = self.offsets.len();
        let mut shift = Vec::with_capacity(self.n_actions * n_off);
        for a in 0..self.n_actions {
            for k in 0..n_off {
                let target: Vec<f64> = self.embeddings[a]
                    .iter()
                    .zip(&self.offsets[k])
                    .map(|(x, d)| (x + d).clamp(-1.0, 1.0))
                    .collect();
                let hood = &self.neighborhoods[a];
                shift.push(nearest_among(&self.embeddings, hood.iter().copied(), &target));
            }
        }
        self.shift = shift;
    }
}

fn nearest_among(embeddings: &[Vec<f64>], candidates: impl Iterator<Item = usize>, x: &[f64]) -> usize {
    let mut best = usize::MAX;
    let mut best_d = f64::INFINITY;
    for c in candidates {
        let d: f64 = embeddings[c]
            .iter()
            .zip(x)
            .map(|(e, v)| (e - v) * (e - v))
            .sum();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

pub(crate) fn linf(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn expect_len(axis: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            axis,
            expected,
            actual,
        })
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidModel(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SLACK {
        return Err(Error::InvalidModel(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}
