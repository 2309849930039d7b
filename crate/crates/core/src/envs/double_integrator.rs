use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, Environment, StepOutcome};
use crate::error::{Error, Result};

pub const DI_DT: f64 = 0.05;
pub const DI_EPISODE_STEPS: usize = 200;

/// `x'' = a`; reward `-(x^2 + 0.1 v^2 + 0.001 a^2)` on the pre-step state.
pub fn double_integrator_step(state: [f64; 2], action: f64) -> ([f64; 2], f64) {
    let [x, v] = state;
    let a = action.clamp(-1.0, 1.0);
    let reward = -(x * x + 0.1 * v * v + 0.001 * a * a);
    let v2 = v + a * DI_DT;
    let x2 = x + v2 * DI_DT;
    ([x2, v2], reward)
}

#[derive(Debug, Clone)]
pub struct DoubleIntegrator {
    state: [f64; 2],
    t: usize,
    done: bool,
}

impl DoubleIntegrator {
    pub fn new() -> Self {
        DoubleIntegrator {
            state: [0.0, 0.0],
            t: 0,
            done: true,
        }
    }

    /// Start an episode from an explicit state.
    pub fn reset_to(&mut self, state: [f64; 2]) -> Vec<f64> {
        self.state = state;
        self.t = 0;
        self.done = false;
        state.to_vec()
    }

    pub fn state(&self) -> [f64; 2] {
        self.state
    }
}

impl Default for DoubleIntegrator {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for DoubleIntegrator {
    fn id(&self) -> &str {
        "double_integrator"
    }

    fn observation_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn max_episode_steps(&self) -> usize {
        DI_EPISODE_STEPS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rng.gen_range(-1.0..=1.0);
        self.reset_to([x, 0.0])
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EnvContract("step called on a finished episode".into()));
        }
        let a = check_action(action, 1)?;
        let (next, reward) = double_integrator_step(self.state, a[0]);
        self.state = next;
        self.t += 1;
        self.done = self.t >= DI_EPISODE_STEPS;
        Ok(StepOutcome {
            observation: next.to_vec(),
            reward,
            done: self.done,
            terminal: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_at_rest_is_free() {
        let (s, r) = double_integrator_step([0.0, 0.0], 0.0);
        assert_eq!(s, [0.0, 0.0]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn no_force_from_one_costs_two_hundred() {
        let mut env = DoubleIntegrator::new();
        env.reset_to([1.0, 0.0]);
        let mut total = 0.0;
        loop {
            let out = env.step(&[0.0]).unwrap();
            total += out.reward;
            assert_eq!(out.observation, vec![1.0, 0.0]);
            if out.done {
                break;
            }
        }
        assert_eq!(total, -200.0);
        assert!(env.step(&[0.0]).is_err());
    }

    #[test]
    fn seeded_resets_repeat() {
        let mut a = DoubleIntegrator::new();
        let mut b = DoubleIntegrator::new();
        assert_eq!(a.reset(17), b.reset(17));
        for i in 0..50 {
            let act = [((i as f64) * 0.37).sin() * 2.0];
            assert_eq!(a.step(&act).unwrap(), b.step(&act).unwrap());
        }
    }

    #[test]
    fn actions_are_clipped() {
        let (s1, r1) = double_integrator_step([0.2, 0.1], 5.0);
        let (s2, r2) = double_integrator_step([0.2, 0.1], 1.0);
        assert_eq!(s1, s2);
        assert_eq!(r1, r2);
    }
}
