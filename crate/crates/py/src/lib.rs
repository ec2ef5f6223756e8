//! Python bindings: mazes, planning problems, planner configuration, the planners and
//! the cost predictors.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fastmctd::bench::{apply_override, parse_config, PlannerKind};
use fastmctd::core_model::{
    generate_maze, is_plausible, load_maze, trajectory_reward, DivisionStyle, GridMaze, MetaAction,
    PlanningProblem, State, Trajectory,
};
use fastmctd::cost_model::{predicted_cost_mctd, predicted_cost_smctd, CostInputs};
use fastmctd::planner::{PlanResult, PlannerConfig};
use fastmctd::sampler::SurrogateDenoiser;
use fastmctd::search_tree::{uct_score, NodeStats};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn trajectory(points: Vec<(f64, f64)>) -> PyResult<Trajectory> {
    Trajectory::new(points.into_iter().map(|(x, y)| State::new(x, y)).collect()).map_err(value_err)
}

fn points(t: &Trajectory) -> Vec<(f64, f64)> {
    t.states().iter().map(|s| (s.x, s.y)).collect()
}

/// Grid maze; cell `(col, row)` covers `[col, col + 1) x [row, row + 1)`.
#[pyclass(name = "Maze", frozen, from_py_object)]
#[derive(Clone)]
struct PyMaze {
    inner: GridMaze,
}

#[pymethods]
impl PyMaze {
    /// Parse the text format: `#` wall, `.` free, `S` start, `G` goal.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        load_maze(text)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(value_err)?;
        Self::from_text(&text)
    }

    #[staticmethod]
    #[pyo3(signature = (size, seed=0, min_chamber=5, door_width=1))]
    fn generate(size: usize, seed: u64, min_chamber: usize, door_width: usize) -> PyResult<Self> {
        if size < 5 || size.is_multiple_of(2) {
            return Err(PyValueError::new_err("size must be odd and >= 5"));
        }
        let style = DivisionStyle {
            min_chamber,
            door_width,
        };
        Ok(Self {
            inner: generate_maze(size, style, seed),
        })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn start(&self) -> (f64, f64) {
        let s = self.inner.start();
        (s.x, s.y)
    }

    #[getter]
    fn goal(&self) -> (f64, f64) {
        let g = self.inner.goal();
        (g.x, g.y)
    }

    fn is_free(&self, x: f64, y: f64) -> bool {
        self.inner.is_free(State::new(x, y))
    }

    fn segment_clear(&self, a: (f64, f64), b: (f64, f64)) -> bool {
        self.inner
            .segment_clear(State::new(a.0, a.1), State::new(b.0, b.1))
    }

    fn with_start(&self, x: f64, y: f64) -> PyResult<Self> {
        self.inner
            .with_start(State::new(x, y))
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("Maze({}x{})", self.inner.width(), self.inner.height())
    }
}

#[pyclass(name = "Problem", frozen, from_py_object)]
#[derive(Clone)]
struct PyProblem {
    inner: PlanningProblem,
}

#[pymethods]
impl PyProblem {
    /// Without `horizon`, the default for the maze size is used.
    #[new]
    #[pyo3(signature = (maze, horizon=None, goal_tolerance=0.5, max_step_length=1.0))]
    fn new(
        maze: &PyMaze,
        horizon: Option<usize>,
        goal_tolerance: f64,
        max_step_length: f64,
    ) -> PyResult<Self> {
        let horizon =
            horizon.unwrap_or_else(|| PlanningProblem::with_defaults(maze.inner.clone()).horizon);
        PlanningProblem::new(maze.inner.clone(), horizon, goal_tolerance, max_step_length)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[getter]
    fn maze(&self) -> PyMaze {
        PyMaze {
            inner: self.inner.maze.clone(),
        }
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon
    }

    #[getter]
    fn goal_tolerance(&self) -> f64 {
        self.inner.goal_tolerance
    }

    #[getter]
    fn max_step_length(&self) -> f64 {
        self.inner.max_step_length
    }

    fn coarsened(&self, interval: usize) -> Self {
        Self {
            inner: self.inner.coarsened(interval),
        }
    }

    fn reward(&self, states: Vec<(f64, f64)>) -> PyResult<f64> {
        Ok(trajectory_reward(&self.inner, &trajectory(states)?))
    }

    fn is_plausible(&self, states: Vec<(f64, f64)>) -> PyResult<bool> {
        Ok(is_plausible(&self.inner, &trajectory(states)?))
    }
}

/// Planner knobs. Keyword names follow the config file keys: `K`, `w`, `beta`, `H`,
/// `L`, `max_iterations`, `open_loop_horizon`, `m`, `workers`, `seed`,
/// `denoise_steps`, `jump_interval`.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: PlannerConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let mut config = Self {
            inner: PlannerConfig::default(),
        };
        if let Some(overrides) = overrides {
            for (key, value) in overrides.iter() {
                config.set(&key.extract::<String>()?, &value.str()?.to_string())?;
            }
        }
        Ok(config)
    }

    /// Parse `key = value` lines on top of the defaults.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        parse_config(text, PlannerConfig::default())
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        apply_override(&mut next, key, value).map_err(value_err)?;
        next.validate().map_err(value_err)?;
        self.inner = next;
        Ok(())
    }

    #[getter]
    fn parallelism(&self) -> usize {
        self.inner.parallelism
    }

    #[getter]
    fn ras_weight(&self) -> f64 {
        self.inner.ras_weight
    }

    #[getter]
    fn exploration(&self) -> f64 {
        self.inner.exploration
    }

    #[getter]
    fn coarsen_interval(&self) -> usize {
        self.inner.coarsen_interval
    }

    #[getter]
    fn subplan_length(&self) -> usize {
        self.inner.subplan_length
    }

    #[getter]
    fn max_iterations(&self) -> usize {
        self.inner.max_iterations
    }

    #[getter]
    fn worker_count(&self) -> usize {
        self.inner.worker_count
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn guidance_set(&self) -> Vec<f64> {
        self.inner
            .guidance_set
            .iter()
            .map(|a| a.guidance_scale)
            .collect()
    }

    #[setter]
    fn set_guidance_set(&mut self, scales: Vec<f64>) -> PyResult<()> {
        let previous = std::mem::replace(
            &mut self.inner.guidance_set,
            scales.into_iter().map(MetaAction::new).collect(),
        );
        if let Err(e) = self.inner.validate() {
            self.inner.guidance_set = previous;
            return Err(value_err(e));
        }
        Ok(())
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "Config(K={}, w={}, beta={}, H={}, L={}, max_iterations={}, seed={})",
            c.parallelism,
            c.ras_weight,
            c.exploration,
            c.coarsen_interval,
            c.subplan_length,
            c.max_iterations,
            c.seed
        )
    }
}

#[pyclass(name = "PlanResult", frozen)]
struct PyPlanResult {
    inner: PlanResult,
}

#[pymethods]
impl PyPlanResult {
    #[getter]
    fn success(&self) -> bool {
        self.inner.success
    }

    #[getter]
    fn trajectory(&self) -> Vec<(f64, f64)> {
        points(&self.inner.trajectory)
    }

    #[getter]
    fn schedule(&self) -> Vec<f64> {
        self.inner
            .schedule
            .actions
            .iter()
            .map(|a| a.guidance_scale)
            .collect()
    }

    #[getter]
    fn reward(&self) -> f64 {
        self.inner.reward
    }

    #[getter]
    fn iterations_used(&self) -> usize {
        self.inner.iterations_used
    }

    #[getter]
    fn expansions(&self) -> usize {
        self.inner.expansions
    }

    #[getter]
    fn rounds(&self) -> usize {
        self.inner.rounds
    }

    #[getter]
    fn planning_calls(&self) -> usize {
        self.inner.planning_calls
    }

    #[getter]
    fn denoise_iterations(&self) -> u64 {
        self.inner.denoise_iterations
    }

    #[getter]
    fn duplicate_selection_fraction(&self) -> f64 {
        self.inner.duplicate_selection_fraction
    }

    #[getter]
    fn wall_clock_s(&self) -> f64 {
        self.inner.wall_clock.as_secs_f64()
    }

    #[getter]
    fn diagnostic(&self) -> Option<String> {
        self.inner.diagnostic.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "PlanResult(success={}, reward={:.3}, rollouts={}, denoise_iterations={})",
            self.inner.success,
            self.inner.reward,
            self.inner.iterations_used,
            self.inner.denoise_iterations
        )
    }
}

/// Run one planner: `mctd`, `pmctd`, `smctd`, `fast` or `fast-replan`. The GIL is
/// released while planning.
#[pyfunction]
#[pyo3(signature = (problem, planner="fast", config=None))]
fn plan(
    py: Python<'_>,
    problem: &PyProblem,
    planner: &str,
    config: Option<PyConfig>,
) -> PyResult<PyPlanResult> {
    let kind: PlannerKind = planner.parse().map_err(value_err)?;
    let config = config.map(|c| c.inner).unwrap_or_default();
    let problem = problem.inner.clone();
    let result = py.detach(move || {
        let sampler = SurrogateDenoiser::new(config.worker_count);
        kind.run(&problem, &sampler, &config)
    });
    result
        .map(|inner| PyPlanResult { inner })
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn cost_inputs(
    n_child: usize,
    s_bar: usize,
    total_subplans: usize,
    interval: usize,
    c_sub: f64,
    c_coarse: f64,
) -> CostInputs {
    CostInputs {
        n_child,
        s_bar,
        total_subplans,
        interval,
        c_sub,
        c_coarse,
    }
}

/// `n_child ** s_bar * c_sub`.
#[pyfunction]
#[pyo3(signature = (n_child, s_bar, total_subplans, interval=1, c_sub=1.0, c_coarse=1.0))]
fn predicted_cost_dense(
    n_child: usize,
    s_bar: usize,
    total_subplans: usize,
    interval: usize,
    c_sub: f64,
    c_coarse: f64,
) -> PyResult<f64> {
    predicted_cost_mctd(&cost_inputs(
        n_child,
        s_bar,
        total_subplans,
        interval,
        c_sub,
        c_coarse,
    ))
    .map_err(value_err)
}

/// `n_child ** (total_subplans / interval) * c_coarse`.
#[pyfunction]
#[pyo3(signature = (n_child, s_bar, total_subplans, interval=1, c_sub=1.0, c_coarse=1.0))]
fn predicted_cost_sparse(
    n_child: usize,
    s_bar: usize,
    total_subplans: usize,
    interval: usize,
    c_sub: f64,
    c_coarse: f64,
) -> PyResult<f64> {
    predicted_cost_smctd(&cost_inputs(
        n_child,
        s_bar,
        total_subplans,
        interval,
        c_sub,
        c_coarse,
    ))
    .map_err(value_err)
}

/// Redundancy-aware UCT score; statistics are `(value, visits, temp_visits)`.
#[pyfunction]
#[pyo3(signature = (child, parent, beta=1.0, w=1.0))]
fn selection_score(child: (f64, u64, u64), parent: (f64, u64, u64), beta: f64, w: f64) -> f64 {
    let stats = |(value, visits, temp_visits)| NodeStats {
        value,
        visits,
        temp_visits,
    };
    uct_score(stats(child), stats(parent), beta, w)
}

#[pymodule]
#[pyo3(name = "fastmctd")]
fn fastmctd_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMaze>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyPlanResult>()?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_cost_dense, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_cost_sparse, m)?)?;
    m.add_function(wrap_pyfunction!(selection_score, m)?)?;
    Ok(())
}
