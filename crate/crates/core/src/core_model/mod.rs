//! Domain types shared by the search tree, the sampler and the planners.
//!
//! Coordinates are in maze cell units: cell `(col, row)` covers
//! `[col, col + 1) x [row, row + 1)`, so its center is at `col + 0.5`.

mod maze;
mod problem;

use std::fmt;
use std::io::{self, BufRead, Write};
use std::ops::{Add, Mul, Sub};

use thiserror::Error;

pub use maze::{generate_maze, load_maze, DivisionStyle, GridMaze, MazeError};
pub use problem::{
    goal_reach_index, is_plausible, lift_plan, trajectory_reward, LiftFailure, PlanningProblem,
    ProblemError,
};

/// A point-mass state in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State {
    pub x: f64,
    pub y: f64,
}

impl State {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn distance(self, other: State) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for State {
    type Output = State;
    fn add(self, rhs: State) -> State {
        State::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for State {
    type Output = State;
    fn sub(self, rhs: State) -> State {
        State::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for State {
    type Output = State;
    fn mul(self, rhs: f64) -> State {
        State::new(self.x * rhs, self.y * rhs)
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory must contain at least one state")]
    Empty,
    #[error("state {index} is not finite")]
    NonFinite { index: usize },
    #[error("coarsening interval must be >= 1, got {0}")]
    BadInterval(usize),
    #[error("trajectory csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// An ordered sequence of states `s_0 .. s_T`. Never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<State>,
}

impl Trajectory {
    pub fn new(states: Vec<State>) -> Result<Self, TrajectoryError> {
        if states.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        if let Some(index) = states.iter().position(|s| !s.is_finite()) {
            return Err(TrajectoryError::NonFinite { index });
        }
        Ok(Self { states })
    }

    pub fn single(state: State) -> Self {
        Self {
            states: vec![state],
        }
    }

    /// Internal constructor for callers that already uphold the invariants.
    pub(crate) fn from_states_unchecked(states: Vec<State>) -> Self {
        debug_assert!(!states.is_empty());
        Self { states }
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn into_states(self) -> Vec<State> {
        self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> State {
        self.states[0]
    }

    pub fn last(&self) -> State {
        *self.states.last().expect("trajectory is never empty")
    }

    pub fn extend_from(&mut self, states: &[State]) {
        self.states.extend_from_slice(states);
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,x,y")?;
        for (t, s) in self.states.iter().enumerate() {
            writeln!(out, "{t},{},{}", s.x, s.y)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, TrajectoryError> {
        let mut states = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| TrajectoryError::Csv {
                line: line_no,
                message: e.to_string(),
            })?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if i == 0 {
                if line != "t,x,y" {
                    return Err(TrajectoryError::Csv {
                        line: line_no,
                        message: format!("expected header `t,x,y`, got `{line}`"),
                    });
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(TrajectoryError::Csv {
                    line: line_no,
                    message: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| TrajectoryError::Csv {
                    line: line_no,
                    message: e.to_string(),
                })
            };
            states.push(State::new(parse(fields[1])?, parse(fields[2])?));
        }
        Trajectory::new(states)
    }
}

/// One block of a trajectory, denoised as a unit. `noise_level` is 0 once fully denoised.
#[derive(Debug, Clone, PartialEq)]
pub struct Subplan {
    pub states: Vec<State>,
    pub noise_level: f64,
}

impl Subplan {
    pub fn denoised(states: Vec<State>) -> Self {
        Self {
            states,
            noise_level: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// A guidance level: the weight applied to the goal-distance cost when sampling a subplan.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MetaAction {
    pub guidance_scale: f64,
}

impl MetaAction {
    pub const fn new(guidance_scale: f64) -> Self {
        Self { guidance_scale }
    }
}

impl fmt::Display for MetaAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.guidance_scale)
    }
}

/// The guidance set used for point-mass mazes.
pub fn default_guidance_set() -> Vec<MetaAction> {
    [0.0, 0.1, 0.5, 1.0, 2.0]
        .into_iter()
        .map(MetaAction::new)
        .collect()
}

/// Per-subplan guidance levels along one root-to-node path.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GuidanceSchedule {
    pub actions: Vec<MetaAction>,
}

impl GuidanceSchedule {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Sum of squared distances from every state to the goal.
pub fn guidance_cost(states: &[State], goal: State) -> f64 {
    states.iter().map(|s| (*s - goal).norm_squared()).sum()
}

/// Derives an independent RNG seed for `stream` from `base` (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keeps states `0, H, 2H, ...` and always the final state.
pub fn coarsen_trajectory(
    trajectory: &Trajectory,
    interval: usize,
) -> Result<Trajectory, TrajectoryError> {
    if interval < 1 {
        return Err(TrajectoryError::BadInterval(interval));
    }
    let states = trajectory.states();
    let mut out: Vec<State> = states.iter().copied().step_by(interval).collect();
    if !(states.len() - 1).is_multiple_of(interval) {
        out.push(trajectory.last());
    }
    Ok(Trajectory::from_states_unchecked(out))
}
