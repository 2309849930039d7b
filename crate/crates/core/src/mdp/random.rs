//! Random instance generators used by the property suites and `aapi verify`.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{FiniteAAMdp, MdpDocument, QTable, TabularPolicy};

/// Largest l-infinity distance between two points of `[-1, 1]^d`.
pub const FULL_REACH: f64 = 2.0;

/// Random AA-MDP with `n_states` states and `n_actions` distinct actions on
/// the grid `{-1, -0.5, 0, 0.5, 1}^d`, `d` in `{1, 2}`.
pub fn random_mdp<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, epsilon: f64, gamma: f64) -> FiniteAAMdp {
    let dim = if n_actions > 5 || rng.gen_bool(0.5) { 2 } else { 1 };
    let ticks = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut grid: Vec<Vec<f64>> = if dim == 1 {
        ticks.iter().map(|&x| vec![x]).collect()
    } else {
        ticks
            .iter()
            .flat_map(|&x| ticks.iter().map(move |&y| vec![x, y]))
            .collect()
    };
    grid.shuffle(rng);
    grid.truncate(n_actions);

    let transition = (0..n_states)
        .map(|_| (0..n_actions).map(|_| random_distribution(rng, n_states)).collect())
        .collect();
    let reward = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let rho = random_distribution(rng, n_states);

    FiniteAAMdp::from_document(MdpDocument {
        n_states,
        gamma,
        epsilon,
        action_embeddings: grid,
        transition,
        reward,
        rho,
    })
    .expect("generated instance is well formed")
}

/// Instance with sizes drawn uniformly from `1..=max_states`, `1..=max_actions`,
/// epsilon in `[0, 2]` and gamma in `[0.5, 0.95]`.
pub fn random_instance<R: Rng>(rng: &mut R, max_states: usize, max_actions: usize) -> FiniteAAMdp {
    let n = rng.gen_range(1..=max_states);
    let a = rng.gen_range(1..=max_actions);
    let eps = match rng.gen_range(0..4) {
        0 => 0.0,
        1 => FULL_REACH,
        _ => rng.gen_range(0.0..FULL_REACH),
    };
    let gamma = rng.gen_range(0.5..0.95);
    random_mdp(rng, n, a, eps, gamma)
}

/// Sparse random probability vector (at least one positive entry).
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.6) { rng.gen_range(0.0..1.0) } else { 0.0 })
        .collect();
    if w.iter().all(|x| *x == 0.0) {
        w[rng.gen_range(0..n)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

pub fn random_policy<R: Rng>(rng: &mut R, mdp: &FiniteAAMdp, stochastic: bool) -> TabularPolicy {
    if stochastic {
        TabularPolicy::Stochastic(
            (0..mdp.n_states())
                .map(|_| random_distribution(rng, mdp.n_actions()))
                .collect(),
        )
    } else {
        TabularPolicy::Deterministic(
            (0..mdp.n_states())
                .map(|_| rng.gen_range(0..mdp.n_actions()))
                .collect(),
        )
    }
}

pub fn random_q<R: Rng>(rng: &mut R, mdp: &FiniteAAMdp, scale: f64) -> QTable {
    QTable::from_rows(
        (0..mdp.n_states())
            .map(|_| (0..mdp.n_actions()).map(|_| rng.gen_range(-scale..scale)).collect())
            .collect(),
    )
    .expect("finite")
}
