//! In-repo environments: the hazard gridworld (exact analysis), a point-mass
//! Maze2D and a 1-D double integrator.

mod double_integrator;
mod gridworld;
mod maze2d;

pub use double_integrator::{double_integrator_step, DoubleIntegrator, DI_DT, DI_EPISODE_STEPS};
pub use gridworld::{
    make_hazard_gridworld, make_hazard_gridworld_with_gamma, GridAction, HazardLayout, TabularEnv,
    GRIDWORLD_GAMMA,
};
pub use maze2d::{maze2d_step, maze_trajectory_csv, Maze2d, Maze2dSpec, MazeState, MazeStep, DEFAULT_MAZE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Episode over (termination or time limit).
    pub done: bool,
    /// True termination; value bootstrapping stops here. Time-limit ends leave this false.
    pub terminal: bool,
}

/// Interaction contract shared by every environment.
///
/// Actions live in `[-1, 1]^d` and are clipped before the dynamics see them.
/// Stepping a finished episode is an error.
pub trait Environment {
    fn id(&self) -> &str;
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn max_episode_steps(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
    /// Discount applied when accumulating reported episode returns.
    fn return_discount(&self) -> f64 {
        1.0
    }
}

pub fn clip_action(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| x.clamp(-1.0, 1.0)).collect()
}

pub(crate) fn check_action(a: &[f64], dim: usize) -> Result<Vec<f64>> {
    if a.len() != dim {
        return Err(Error::EnvContract(format!(
            "action has {} components, expected {dim}",
            a.len()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::EnvContract("non-finite action".into()));
    }
    Ok(clip_action(a))
}

/// Buildable description of an environment, as used in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    DoubleIntegrator,
    Maze2d {
        /// Plain-text layout; the default U-maze when absent.
        #[serde(default)]
        layout: Option<String>,
        #[serde(default)]
        max_steps: Option<usize>,
    },
    HazardGridworld {
        #[serde(default = "default_grid_n")]
        n: usize,
        #[serde(default = "default_hazard_penalty")]
        hazard_penalty: f64,
        #[serde(default = "default_grid_eps")]
        epsilon: f64,
        #[serde(default = "default_grid_gamma")]
        gamma: f64,
    },
}

fn default_grid_n() -> usize {
    4
}
fn default_hazard_penalty() -> f64 {
    -50.0
}
fn default_grid_eps() -> f64 {
    1.0
}
fn default_grid_gamma() -> f64 {
    GRIDWORLD_GAMMA
}

impl EnvSpec {
    pub fn id(&self) -> &'static str {
        match self {
            EnvSpec::DoubleIntegrator => "double_integrator",
            EnvSpec::Maze2d { .. } => "maze2d",
            EnvSpec::HazardGridworld { .. } => "hazard_gridworld",
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::DoubleIntegrator => Box::new(DoubleIntegrator::new()),
            EnvSpec::Maze2d { layout, max_steps } => {
                let mut spec = match layout {
                    Some(text) => Maze2dSpec::parse(text)?,
                    None => Maze2dSpec::default_u_maze(),
                };
                if let Some(m) = max_steps {
                    spec.max_steps = *m;
                }
                Box::new(Maze2d::new(spec))
            }
            EnvSpec::HazardGridworld { .. } => Box::new(TabularEnv::new(self.tabular()?.expect("tabular"))),
        })
    }

    /// The finite model behind tabular environments.
    pub fn tabular(&self) -> Result<Option<crate::mdp::FiniteAAMdp>> {
        match self {
            EnvSpec::HazardGridworld {
                n,
                hazard_penalty,
                epsilon,
                gamma,
            } => Ok(Some(make_hazard_gridworld_with_gamma(*n, *hazard_penalty, *epsilon, *gamma)?)),
            _ => Ok(None),
        }
    }
}
