use thiserror::Error;

use super::{GridMaze, State, Trajectory};

/// Slack on the step-length test so that clipped steps of exactly `max_step_length`
/// survive floating-point rounding.
const STEP_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("horizon must be >= 1")]
    Horizon,
    #[error("goal tolerance must be > 0, got {0}")]
    Tolerance(f64),
    #[error("max step length must be > 0, got {0}")]
    StepLength(f64),
}

/// A maze plus the planning limits: horizon in steps and tolerances in cell units.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningProblem {
    pub maze: GridMaze,
    pub horizon: usize,
    pub goal_tolerance: f64,
    pub max_step_length: f64,
}

impl PlanningProblem {
    pub const DEFAULT_GOAL_TOLERANCE: f64 = 0.5;
    pub const DEFAULT_MAX_STEP_LENGTH: f64 = 1.0;

    pub fn new(
        maze: GridMaze,
        horizon: usize,
        goal_tolerance: f64,
        max_step_length: f64,
    ) -> Result<Self, ProblemError> {
        if horizon < 1 {
            return Err(ProblemError::Horizon);
        }
        if !(goal_tolerance > 0.0 && goal_tolerance.is_finite()) {
            return Err(ProblemError::Tolerance(goal_tolerance));
        }
        if !(max_step_length > 0.0 && max_step_length.is_finite()) {
            return Err(ProblemError::StepLength(max_step_length));
        }
        Ok(Self {
            maze,
            horizon,
            goal_tolerance,
            max_step_length,
        })
    }

    /// Default tolerances and a horizon of 500 steps, or 1000 for mazes of side 63 and up.
    pub fn with_defaults(maze: GridMaze) -> Self {
        let horizon = if maze.width().max(maze.height()) >= 63 {
            1000
        } else {
            500
        };
        Self::new(
            maze,
            horizon,
            Self::DEFAULT_GOAL_TOLERANCE,
            Self::DEFAULT_MAX_STEP_LENGTH,
        )
        .expect("defaults are valid")
    }

    /// The abstract problem planned over by the sparse planner: one coarse step stands
    /// for `interval` dense steps.
    pub fn coarsened(&self, interval: usize) -> Self {
        let interval = interval.max(1);
        Self {
            maze: self.maze.clone(),
            horizon: (self.horizon / interval).max(1),
            goal_tolerance: self.goal_tolerance,
            max_step_length: self.max_step_length * interval as f64,
        }
    }

    pub fn start(&self) -> State {
        self.maze.start()
    }

    pub fn goal(&self) -> State {
        self.maze.goal()
    }

    pub fn reaches_goal(&self, s: State) -> bool {
        s.distance(self.goal()) <= self.goal_tolerance
    }

    /// Whether a single step is short enough and does not cross a wall.
    pub fn step_ok(&self, a: State, b: State) -> bool {
        a.distance(b) <= self.max_step_length + STEP_SLACK && self.maze.segment_clear(a, b)
    }
}

/// Every state free, every step no longer than `max_step_length`, no segment through a wall.
pub fn is_plausible(problem: &PlanningProblem, trajectory: &Trajectory) -> bool {
    let states = trajectory.states();
    states.iter().all(|s| problem.maze.is_free(*s))
        && states.windows(2).all(|w| problem.step_ok(w[0], w[1]))
}

/// First index whose state is within `goal_tolerance` of the goal.
pub fn goal_reach_index(problem: &PlanningProblem, trajectory: &Trajectory) -> Option<usize> {
    trajectory
        .states()
        .iter()
        .position(|s| problem.reaches_goal(*s))
}

/// `(H - t*) / H` for a plausible trajectory first reaching the goal at `t* <= H`, else 0.
pub fn trajectory_reward(problem: &PlanningProblem, trajectory: &Trajectory) -> f64 {
    let horizon = problem.horizon;
    match goal_reach_index(problem, trajectory) {
        Some(t) if t <= horizon && is_plausible(problem, trajectory) => {
            (horizon - t) as f64 / horizon as f64
        }
        _ => 0.0,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LiftFailure {
    #[error("segment between waypoints {from} and {to} is blocked")]
    Blocked { from: usize, to: usize },
    #[error("waypoints {from} and {to} are {distance} apart, beyond {substeps} steps")]
    TooFar {
        from: usize,
        to: usize,
        distance: f64,
        substeps: usize,
    },
    #[error("invalid lift request: {0}")]
    Invalid(&'static str),
}

/// Straight-line controller: moves between consecutive waypoints in equal increments
/// no longer than `max_step_length`, at most `substeps` increments per waypoint pair.
pub fn lift_plan(
    problem: &PlanningProblem,
    coarse: &Trajectory,
    substeps: usize,
) -> Result<Trajectory, LiftFailure> {
    if substeps < 1 {
        return Err(LiftFailure::Invalid("substeps must be >= 1"));
    }
    let waypoints = coarse.states();
    let mut dense = vec![waypoints[0]];
    for (i, pair) in waypoints.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let blocked = LiftFailure::Blocked { from: i, to: i + 1 };
        if !problem.maze.segment_clear(a, b) {
            return Err(blocked);
        }
        let distance = a.distance(b);
        if distance == 0.0 {
            continue;
        }
        let increments = (distance / problem.max_step_length - STEP_SLACK)
            .ceil()
            .max(1.0) as usize;
        if increments > substeps {
            return Err(LiftFailure::TooFar {
                from: i,
                to: i + 1,
                distance,
                substeps,
            });
        }
        let mut prev = a;
        for k in 1..=increments {
            let next = if k == increments {
                b
            } else {
                a + (b - a) * (k as f64 / increments as f64)
            };
            if !problem.step_ok(prev, next) {
                return Err(blocked);
            }
            dense.push(next);
            prev = next;
        }
    }
    Ok(Trajectory::from_states_unchecked(dense))
}
