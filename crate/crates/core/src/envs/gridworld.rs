//! Hazard gridworld: a finite analogue of wall-hugging in a maze.
//!
//! Layout on an `n x n` grid (row 0 at the top):
//!
//! ```text
//! . . . .      start S at (n-2, 0), goal G at (n-2, n-1)
//! . . . .      hazard strip H on row n-1, columns 1..n-2
//! S . . G      the shortest path runs along row n-2, right above H
//! . H H .
//! ```
//!
//! Moves are east/west/north/south embedded at `(1,0)`, `(-1,0)`, `(0,1)`,
//! `(0,-1)`. With `epsilon >= 1` the adversary can turn any move into a
//! perpendicular one, so walking along the strip risks being pushed in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::mdp::{FiniteAAMdp, MdpDocument};

pub const GRIDWORLD_GAMMA: f64 = 0.95;
const STEP_REWARD: f64 = -1.0;
const TABULAR_MAX_STEPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    East = 0,
    West = 1,
    North = 2,
    South = 3,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [GridAction::East, GridAction::West, GridAction::North, GridAction::South];

    pub fn embedding(self) -> [f64; 2] {
        match self {
            GridAction::East => [1.0, 0.0],
            GridAction::West => [-1.0, 0.0],
            GridAction::North => [0.0, 1.0],
            GridAction::South => [0.0, -1.0],
        }
    }

    fn delta(self) -> (isize, isize) {
        match self {
            GridAction::East => (0, 1),
            GridAction::West => (0, -1),
            GridAction::North => (-1, 0),
            GridAction::South => (1, 0),
        }
    }
}

/// Cell bookkeeping for a hazard gridworld of side `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HazardLayout {
    pub n: usize,
}

impl HazardLayout {
    pub fn state(&self, row: usize, col: usize) -> usize {
        row * self.n + col
    }

    pub fn cell(&self, s: usize) -> (usize, usize) {
        (s / self.n, s % self.n)
    }

    pub fn start(&self) -> usize {
        self.state(self.n - 2, 0)
    }

    pub fn goal(&self) -> usize {
        self.state(self.n - 2, self.n - 1)
    }

    pub fn is_hazard(&self, s: usize) -> bool {
        let (r, c) = self.cell(s);
        r == self.n - 1 && c >= 1 && c <= self.n - 2
    }

    /// States of the straight start-to-goal path, goal excluded.
    pub fn shortest_path(&self) -> Vec<usize> {
        (0..self.n - 1).map(|c| self.state(self.n - 2, c)).collect()
    }

    fn next(&self, s: usize, a: GridAction) -> usize {
        let (r, c) = self.cell(s);
        let (dr, dc) = a.delta();
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= self.n as isize || nc >= self.n as isize {
            s
        } else {
            self.state(nr as usize, nc as usize)
        }
    }
}

pub fn make_hazard_gridworld(n: usize, hazard_penalty: f64, eps: f64) -> Result<FiniteAAMdp> {
    make_hazard_gridworld_with_gamma(n, hazard_penalty, eps, GRIDWORLD_GAMMA)
}

pub fn make_hazard_gridworld_with_gamma(n: usize, hazard_penalty: f64, eps: f64, gamma: f64) -> Result<FiniteAAMdp> {
    if n < 3 {
        return Err(Error::Layout(format!(
            "hazard gridworld needs n >= 3 for a start-goal path, got {n}"
        )));
    }
    let layout = HazardLayout { n };
    let ns = n * n;
    let mut transition = Vec::with_capacity(ns);
    let mut reward = Vec::with_capacity(ns);
    for s in 0..ns {
        let absorbing = s == layout.goal() || layout.is_hazard(s);
        let mut p_rows = Vec::with_capacity(4);
        let mut r_row = Vec::with_capacity(4);
        for a in GridAction::ALL {
            let next = if absorbing { s } else { layout.next(s, a) };
            let mut row = vec![0.0; ns];
            row[next] = 1.0;
            p_rows.push(row);
            r_row.push(if absorbing {
                0.0
            } else if layout.is_hazard(next) {
                hazard_penalty
            } else {
                STEP_REWARD
            });
        }
        transition.push(p_rows);
        reward.push(r_row);
    }
    let mut rho = vec![0.0; ns];
    rho[layout.start()] = 1.0;
    FiniteAAMdp::from_document(MdpDocument {
        n_states: ns,
        gamma,
        epsilon: eps,
        action_embeddings: GridAction::ALL.iter().map(|a| a.embedding().to_vec()).collect(),
        transition,
        reward,
        rho,
    })
}

/// Episodic simulator over any [`FiniteAAMdp`].
///
/// Observations are `[state index]`. Continuous actions snap to the nearest
/// action embedding; absorbing zero-reward states end the episode.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: FiniteAAMdp,
    state: usize,
    t: usize,
    done: bool,
    rng: ChaCha8Rng,
    max_steps: usize,
}

impl TabularEnv {
    pub fn new(mdp: FiniteAAMdp) -> Self {
        TabularEnv {
            mdp,
            state: 0,
            t: 0,
            done: true,
            rng: ChaCha8Rng::seed_from_u64(0),
            max_steps: TABULAR_MAX_STEPS,
        }
    }

    pub fn mdp(&self) -> &FiniteAAMdp {
        &self.mdp
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn sample(&mut self, p: &[f64]) -> usize {
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (i, &w) in p.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

impl Environment for TabularEnv {
    fn id(&self) -> &str {
        "hazard_gridworld"
    }

    fn observation_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        self.mdp.action_dim()
    }

    fn max_episode_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = self.mdp.rho().to_vec();
        self.state = self.sample(&rho);
        self.t = 0;
        self.done = self.mdp.is_terminal(self.state);
        vec![self.state as f64]
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EnvContract("step called on a finished episode".into()));
        }
        let a = check_action(action, self.mdp.action_dim())?;
        let a = self.mdp.nearest_action(&a);
        let reward = self.mdp.reward(self.state, a);
        let row = self.mdp.transition_row(self.state, a).to_vec();
        self.state = self.sample(&row);
        self.t += 1;
        let terminal = self.mdp.is_terminal(self.state);
        self.done = terminal || self.t >= self.max_steps;
        Ok(StepOutcome {
            observation: vec![self.state as f64],
            reward,
            done: self.done,
            terminal,
        })
    }

    fn return_discount(&self) -> f64 {
        self.mdp.gamma()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{policy_iteration, state_values};
    use crate::oapi::{exhaustive_maximin, oa_policy_evaluation};

    #[test]
    fn rows_are_distributions_and_small_grids_fail() {
        let m = make_hazard_gridworld(4, -50.0, 1.0).unwrap();
        for s in 0..m.n_states() {
            for a in 0..4 {
                let sum: f64 = m.transition_row(s, a).iter().sum();
                assert_eq!(sum, 1.0);
            }
        }
        assert!(matches!(make_hazard_gridworld(2, -50.0, 1.0), Err(Error::Layout(_))));
    }

    #[test]
    fn neighborhoods_grow_with_epsilon() {
        let eps = [0.0, 0.5, 1.0, 1.5, 2.0];
        let ms: Vec<_> = eps.iter().map(|&e| make_hazard_gridworld(3, -10.0, e).unwrap()).collect();
        for w in ms.windows(2) {
            for a in 0..4 {
                assert!(w[0].neighborhood(a).iter().all(|x| w[1].neighborhood(a).contains(x)));
            }
        }
        // perpendicular moves at eps = 1, everything at eps = 2
        assert_eq!(ms[2].neighborhood(0), &[0, 2, 3]);
        assert_eq!(ms[4].neighborhood(0), &[0, 1, 2, 3]);
    }

    #[test]
    fn nominal_optimum_walks_the_strip() {
        let m = make_hazard_gridworld(3, -50.0, 0.0).unwrap();
        let layout = HazardLayout { n: 3 };
        let res = exhaustive_maximin(&m).unwrap();
        let pi = policy_iteration(&m, 1e-12, 100).unwrap();
        let v = state_values(&pi.q, &pi.policy);
        assert!((v[layout.start()] - res.objective).abs() < 1e-9);
        // -1 per step for 2 steps
        assert!((res.objective + 1.95).abs() < 1e-9);
        let acts = pi.policy.as_deterministic().unwrap();
        for s in layout.shortest_path() {
            assert_eq!(acts[s], GridAction::East as usize);
        }
    }

    #[test]
    fn robust_optimum_leaves_the_strip() {
        for n in [3, 4] {
            let m = make_hazard_gridworld(n, -50.0, 1.0).unwrap();
            let layout = HazardLayout { n };
            let oa = crate::oapi::oa_policy_iteration(&m, 1e-12, 100).unwrap();
            let hug = policy_iteration(&m, 1e-12, 100).unwrap().policy;
            let start = layout.start();
            let robust = oa_policy_evaluation(&oa.policy, &m, 1e-12).unwrap().values[start];
            let hugging = oa_policy_evaluation(&hug, &m, 1e-12).unwrap().values[start];
            assert!(robust > hugging + 1.0, "n={n}: {robust} vs {hugging}");
            let acts = oa.policy.as_deterministic().unwrap();
            for c in 1..n - 1 {
                let s = layout.state(n - 2, c);
                assert_eq!(acts[s], GridAction::North as usize, "n={n} col {c}");
            }
            if n == 3 {
                let brute = exhaustive_maximin(&m).unwrap();
                assert!((brute.objective - robust).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn absorbing_cells_have_one_distinct_action() {
        let m = make_hazard_gridworld(4, -50.0, 1.0).unwrap();
        let layout = HazardLayout { n: 4 };
        let classes = crate::oapi::distinct_actions(&m);
        for s in 0..16 {
            let absorbing = s == layout.goal() || layout.is_hazard(s);
            assert_eq!(classes[s].len() == 1, absorbing, "state {s}");
        }
    }

    #[test]
    fn simulator_follows_model() {
        let m = make_hazard_gridworld(4, -50.0, 1.0).unwrap();
        let mut env = TabularEnv::new(m.clone());
        let layout = HazardLayout { n: 4 };
        assert_eq!(env.reset(0), vec![layout.start() as f64]);
        let mut ret = 0.0;
        let mut disc = 1.0;
        loop {
            let out = env.step(&GridAction::East.embedding()).unwrap();
            ret += disc * out.reward;
            disc *= env.return_discount();
            if out.done {
                assert!(out.terminal);
                assert_eq!(env.state(), layout.goal());
                break;
            }
        }
        assert!((ret + (1.0 + 0.95 + 0.9025)).abs() < 1e-12);
    }
}
