//! Point-mass maze. A ball is pushed by a 2-D force; walls block motion per
//! axis; reaching the goal disk pays 200 and ends the episode.
//!
//! Coordinates: cell `(row, col)` of a text layout covers
//! `x in [col, col+1)`, `y in [rows-1-row, rows-row)`; row 0 is the top line.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, Environment, StepOutcome};
use crate::error::{Error, Result};

/// U-shaped corridor: start bottom-left, goal top-left, joined on the right.
pub const DEFAULT_MAZE: &str = "\
#####
#G..#
###.#
#S..#
#####
";

const GOAL_REWARD: f64 = 200.0;
const START_JITTER: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Maze2dSpec {
    /// `walls[row][col]`, row 0 on top.
    pub walls: Vec<Vec<bool>>,
    pub start: (usize, usize),
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub speed_cap: f64,
    pub force_scale: f64,
    pub dt: f64,
    pub goal_reward: f64,
    pub max_steps: usize,
}

impl Maze2dSpec {
    /// Parse a layout of `#` walls, `.` free, `S` start and `G` goal cells.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(Error::Layout("empty maze layout".into()));
        }
        let width = lines[0].chars().count();
        let rows = lines.len();
        let mut walls = Vec::with_capacity(rows);
        let (mut start, mut goal) = (None, None);
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::Layout(format!(
                    "row {r} has {} cells, expected {width}",
                    line.chars().count()
                )));
            }
            let mut row = Vec::with_capacity(width);
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => row.push(true),
                    '.' => row.push(false),
                    'S' | 'G' => {
                        let slot = if ch == 'S' { &mut start } else { &mut goal };
                        if slot.replace((r, c)).is_some() {
                            return Err(Error::Layout(format!("more than one '{ch}' cell")));
                        }
                        row.push(false);
                    }
                    other => return Err(Error::Layout(format!("unknown cell '{other}' at row {r}, col {c}"))),
                }
            }
            walls.push(row);
        }
        let start = start.ok_or_else(|| Error::Layout("no start cell 'S'".into()))?;
        let goal = goal.ok_or_else(|| Error::Layout("no goal cell 'G'".into()))?;
        let spec = Maze2dSpec {
            goal: cell_center(rows, goal),
            walls,
            start,
            goal_radius: 0.5,
            speed_cap: 5.0,
            force_scale: 1.0,
            dt: 0.05,
            goal_reward: GOAL_REWARD,
            max_steps: 500,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn default_u_maze() -> Self {
        Self::parse(DEFAULT_MAZE).expect("built-in maze parses")
    }

    pub fn rows(&self) -> usize {
        self.walls.len()
    }

    pub fn cols(&self) -> usize {
        self.walls[0].len()
    }

    pub fn start_point(&self) -> [f64; 2] {
        cell_center(self.rows(), self.start)
    }

    /// Wall test for a point; anything outside the grid counts as wall.
    pub fn is_wall(&self, p: [f64; 2]) -> bool {
        if !(p[0] >= 0.0 && p[1] >= 0.0) {
            return true;
        }
        let (col, yi) = (p[0].floor() as usize, p[1].floor() as usize);
        if col >= self.cols() || yi >= self.rows() {
            return true;
        }
        self.walls[self.rows() - 1 - yi][col]
    }

    fn validate(&self) -> Result<()> {
        if self.goal_radius <= 0.0 || self.speed_cap <= 0.0 || self.dt <= 0.0 || self.force_scale <= 0.0 {
            return Err(Error::Layout("goal radius, speed cap, dt and force scale must be positive".into()));
        }
        if self.is_wall(self.start_point()) || self.is_wall(self.goal) {
            return Err(Error::Layout("start and goal must lie in free cells".into()));
        }
        if !self.connected() {
            return Err(Error::Layout("goal is unreachable from start".into()));
        }
        Ok(())
    }

    fn connected(&self) -> bool {
        let (rows, cols) = (self.rows(), self.cols());
        let goal = (rows - 1 - self.goal[1].floor() as usize, self.goal[0].floor() as usize);
        let mut seen = vec![vec![false; cols]; rows];
        let mut stack = vec![self.start];
        seen[self.start.0][self.start.1] = true;
        while let Some((r, c)) = stack.pop() {
            if (r, c) == goal {
                return true;
            }
            let nbrs = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)];
            for (nr, nc) in nbrs {
                if nr < rows && nc < cols && !self.walls[nr][nc] && !seen[nr][nc] {
                    seen[nr][nc] = true;
                    stack.push((nr, nc));
                }
            }
        }
        false
    }
}

fn cell_center(rows: usize, (r, c): (usize, usize)) -> [f64; 2] {
    [c as f64 + 0.5, (rows - 1 - r) as f64 + 0.5]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MazeState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

impl MazeState {
    pub fn observation(&self) -> Vec<f64> {
        vec![self.position[0], self.position[1], self.velocity[0], self.velocity[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MazeStep {
    pub state: MazeState,
    pub reward: f64,
    pub reached_goal: bool,
}

/// One integrator step. Time limits are the caller's business.
pub fn maze2d_step(state: MazeState, action: [f64; 2], spec: &Maze2dSpec) -> MazeStep {
    let mut p = state.position;
    let mut v = state.velocity;
    for i in 0..2 {
        let a = action[i].clamp(-1.0, 1.0);
        v[i] = (v[i] + spec.force_scale * a * spec.dt).clamp(-spec.speed_cap, spec.speed_cap);
    }
    // x first, then y; a blocked axis loses its velocity
    for i in 0..2 {
        let mut trial = p;
        trial[i] += v[i] * spec.dt;
        if spec.is_wall(trial) {
            v[i] = 0.0;
        } else {
            p = trial;
        }
    }
    let next = MazeState {
        position: p,
        velocity: v,
    };
    let d = ((p[0] - spec.goal[0]).powi(2) + (p[1] - spec.goal[1]).powi(2)).sqrt();
    let reached_goal = d < spec.goal_radius;
    MazeStep {
        state: next,
        reward: if reached_goal { spec.goal_reward } else { 0.0 },
        reached_goal,
    }
}

#[derive(Debug, Clone)]
pub struct Maze2d {
    spec: Maze2dSpec,
    state: MazeState,
    t: usize,
    done: bool,
}

impl Maze2d {
    pub fn new(spec: Maze2dSpec) -> Self {
        let state = MazeState {
            position: spec.start_point(),
            velocity: [0.0; 2],
        };
        Maze2d {
            spec,
            state,
            t: 0,
            done: true,
        }
    }

    pub fn spec(&self) -> &Maze2dSpec {
        &self.spec
    }

    pub fn state(&self) -> MazeState {
        self.state
    }
}

impl Environment for Maze2d {
    fn id(&self) -> &str {
        "maze2d"
    }

    fn observation_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn max_episode_steps(&self) -> usize {
        self.spec.max_steps
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = self.spec.start_point();
        self.state = MazeState {
            position: [
                c[0] + rng.gen_range(-START_JITTER..=START_JITTER),
                c[1] + rng.gen_range(-START_JITTER..=START_JITTER),
            ],
            velocity: [0.0; 2],
        };
        self.t = 0;
        self.done = false;
        self.state.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EnvContract("step called on a finished episode".into()));
        }
        let a = check_action(action, 2)?;
        let out = maze2d_step(self.state, [a[0], a[1]], &self.spec);
        self.state = out.state;
        self.t += 1;
        self.done = out.reached_goal || self.t >= self.spec.max_steps;
        Ok(StepOutcome {
            observation: self.state.observation(),
            reward: out.reward,
            done: self.done,
            terminal: out.reached_goal,
        })
    }
}

/// Roll out `actions` from `start` and dump `t,x,y,vx,vy,ax,ay,r` rows.
pub fn maze_trajectory_csv(spec: &Maze2dSpec, start: MazeState, actions: &[[f64; 2]]) -> String {
    let mut out = String::from("t,x,y,vx,vy,ax,ay,r\n");
    let mut s = start;
    for (t, a) in actions.iter().enumerate() {
        let step = maze2d_step(s, *a, spec);
        s = step.state;
        let _ = writeln!(
            out,
            "{t},{},{},{},{},{},{},{}",
            s.position[0], s.position[1], s.velocity[0], s.velocity[1], a[0], a[1], step.reward
        );
        if step.reached_goal {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_layout() {
        let spec = Maze2dSpec::default_u_maze();
        assert_eq!((spec.rows(), spec.cols()), (5, 5));
        assert_eq!(spec.start_point(), [1.5, 1.5]);
        assert_eq!(spec.goal, [1.5, 3.5]);
        assert!(spec.is_wall([1.5, 2.5]));
        assert!(!spec.is_wall([3.5, 2.5]));
        assert!(spec.is_wall([-0.1, 1.0]));
    }

    #[test]
    fn bad_layouts() {
        for text in ["", "#S#\n#.", "#S.#\n#..#", "#S#G#\n#####", "S.G\n.x."] {
            assert!(matches!(Maze2dSpec::parse(text), Err(Error::Layout(_))), "{text:?}");
        }
        assert!(Maze2dSpec::parse("SG").is_ok());
    }

    #[test]
    fn wall_stops_one_axis() {
        let spec = Maze2dSpec::default_u_maze();
        // hugging the top of the start corridor: y = 1.99, moving up and right
        let s = MazeState {
            position: [1.5, 1.99],
            velocity: [1.0, 1.0],
        };
        let out = maze2d_step(s, [0.0, 0.0], &spec);
        assert_eq!(out.state.velocity[1], 0.0);
        assert_eq!(out.state.position[1], 1.99);
        assert_eq!(out.state.position[0], 1.5 + 0.05);
    }

    #[test]
    fn goal_pays_and_terminates() {
        let spec = Maze2dSpec::default_u_maze();
        let at = |x: f64, y: f64| MazeState {
            position: [x, y],
            velocity: [0.0, 0.0],
        };
        let out = maze2d_step(at(1.5, 3.1), [0.0, 0.0], &spec);
        assert!(out.reached_goal);
        assert_eq!(out.reward, 200.0);
        // exactly on the radius is outside
        let edge = maze2d_step(at(2.0, 3.5), [0.0, 0.0], &spec);
        assert!(!edge.reached_goal);
        assert_eq!(edge.reward, 0.0);
    }

    #[test]
    fn trajectory_csv_header_and_rows() {
        let spec = Maze2dSpec::default_u_maze();
        let start = MazeState {
            position: spec.start_point(),
            velocity: [0.0; 2],
        };
        let csv = maze_trajectory_csv(&spec, start, &[[1.0, 0.0]; 3]);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "t,x,y,vx,vy,ax,ay,r");
        assert_eq!(lines.len(), 4);
    }

    proptest! {
        #[test]
        fn physics_invariants(seed in 0u64..1000, actions in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..300)) {
            let spec = Maze2dSpec::default_u_maze();
            let mut env = Maze2d::new(spec.clone());
            env.reset(seed);
            for (ax, ay) in actions {
                let out = env.step(&[ax, ay]).unwrap();
                let st = env.state();
                prop_assert!(st.velocity.iter().all(|v| v.abs() <= 5.0));
                prop_assert!(!spec.is_wall(st.position));
                let d = ((st.position[0] - spec.goal[0]).powi(2) + (st.position[1] - spec.goal[1]).powi(2)).sqrt();
                prop_assert_eq!(out.terminal, d < 0.5);
                if out.done { break; }
            }
        }
    }
}
