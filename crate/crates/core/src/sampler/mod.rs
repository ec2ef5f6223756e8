//! Subplan sampler contract and the iterative-denoising surrogate behind it.
//!
//! The surrogate starts every block from seeded noise (a jittered ramp from the
//! previous anchor toward a point drawn uniformly over the maze) and runs a fixed
//! number of iterations of four operations:
//!
//! 1. neighbor-averaging smoothing of interior states,
//! 2. attraction toward the goal, proportional to the guidance scale,
//! 3. projection of blocked states onto the nearest free cell,
//! 4. a kinematic pass that walks from the anchor through the states. Each step heads
//!    for its state along a shortest path inside a window around the walker, is clipped
//!    to `max_step_length`, and never crosses a wall.
//!
//! The window stands for how far the prior's knowledge of corridors reaches. It spans a
//! fixed number of plan steps, so in a coarsened problem, where one step covers several
//! cells, the prior sees correspondingly further.
//!
//! Batched entry points pack requests into one padded block and advance all rows
//! together; results are bit-identical to the single-request path.

mod nav;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use thiserror::Error;

use crate::core_model::{
    GridMaze, GuidanceSchedule, MetaAction, PlanningProblem, State, Subplan, Trajectory,
};

use nav::LocalNav;

#[derive(Debug, Error, PartialEq)]
pub enum BudgetError {
    #[error("denoise steps must be >= 1")]
    Steps,
    #[error("jump interval must be in 1..={steps}, got {interval}")]
    Jump { interval: usize, steps: usize },
}

/// Denoising work per call: `denoise_steps` for an expansion, and
/// `ceil(denoise_steps / jump_interval)` jumpy steps for a completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerBudget {
    denoise_steps: usize,
    jump_interval: usize,
}

impl Default for SamplerBudget {
    fn default() -> Self {
        Self {
            denoise_steps: 20,
            jump_interval: 10,
        }
    }
}

impl SamplerBudget {
    pub fn new(denoise_steps: usize, jump_interval: usize) -> Result<Self, BudgetError> {
        if denoise_steps < 1 {
            return Err(BudgetError::Steps);
        }
        if jump_interval < 1 || jump_interval > denoise_steps {
            return Err(BudgetError::Jump {
                interval: jump_interval,
                steps: denoise_steps,
            });
        }
        Ok(Self {
            denoise_steps,
            jump_interval,
        })
    }

    pub fn denoise_steps(&self) -> usize {
        self.denoise_steps
    }

    pub fn jump_interval(&self) -> usize {
        self.jump_interval
    }

    pub fn jumpy_steps(&self) -> usize {
        self.denoise_steps.div_ceil(self.jump_interval)
    }

    /// Fine steps covered by each jumpy step; the last one takes the remainder.
    fn jumpy_spans(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.jumpy_steps();
        (0..n).map(move |k| {
            if k + 1 < n {
                self.jump_interval
            } else {
                self.denoise_steps - self.jump_interval * (n - 1)
            }
        })
    }
}

/// Request to sample the next subplan after `prefix` under guidance `action`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerRequest {
    pub prefix: Trajectory,
    pub action: MetaAction,
    pub subplan_length: usize,
    pub rng_seed: u64,
}

/// Request to fill in the remaining `remaining_subplans` blocks after `prefix`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prefix: Trajectory,
    /// Guidance per remaining block; the last entry repeats when the schedule is short.
    pub schedule: GuidanceSchedule,
    pub remaining_subplans: usize,
    pub subplan_length: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricsSnapshot {
    /// Denoising iterations summed over requests.
    pub denoise_iterations: u64,
    /// Iterations over whole packed blocks; a batch counts once.
    pub joint_iterations: u64,
    pub states_processed: u64,
    pub requests: u64,
}

impl std::ops::Sub for MetricsSnapshot {
    type Output = MetricsSnapshot;
    fn sub(self, rhs: Self) -> Self {
        Self {
            denoise_iterations: self.denoise_iterations - rhs.denoise_iterations,
            joint_iterations: self.joint_iterations - rhs.joint_iterations,
            states_processed: self.states_processed - rhs.states_processed,
            requests: self.requests - rhs.requests,
        }
    }
}

#[derive(Debug, Default)]
pub struct SamplerMetrics {
    denoise_iterations: AtomicU64,
    joint_iterations: AtomicU64,
    states_processed: AtomicU64,
    requests: AtomicU64,
}

impl SamplerMetrics {
    pub fn record(&self, requests: u64, iterations: u64, states: u64) {
        self.denoise_iterations
            .fetch_add(requests * iterations, Ordering::Relaxed);
        self.joint_iterations
            .fetch_add(iterations, Ordering::Relaxed);
        self.states_processed
            .fetch_add(states * iterations, Ordering::Relaxed);
        self.requests.fetch_add(requests, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            denoise_iterations: self.denoise_iterations.load(Ordering::Relaxed),
            joint_iterations: self.joint_iterations.load(Ordering::Relaxed),
            states_processed: self.states_processed.load(Ordering::Relaxed),
            requests: self.requests.load(Ordering::Relaxed),
        }
    }
}

/// The seam between search and the generative model.
///
/// Implementations must be deterministic in their inputs, and the batched methods
/// must return exactly what the single-request methods would, in request order.
pub trait SubplanSampler: Send + Sync {
    fn expand_subplan(
        &self,
        request: &SamplerRequest,
        budget: &SamplerBudget,
        problem: &PlanningProblem,
    ) -> Subplan;

    fn complete_trajectory(
        &self,
        request: &CompletionRequest,
        budget: &SamplerBudget,
        problem: &PlanningProblem,
    ) -> Trajectory;

    fn expand_batch(
        &self,
        requests: &[SamplerRequest],
        budget: &SamplerBudget,
        problem: &PlanningProblem,
    ) -> Vec<Subplan> {
        requests
            .iter()
            .map(|r| self.expand_subplan(r, budget, problem))
            .collect()
    }

    fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        budget: &SamplerBudget,
        problem: &PlanningProblem,
    ) -> Vec<Trajectory> {
        requests
            .iter()
            .map(|r| self.complete_trajectory(r, budget, problem))
            .collect()
    }

    fn metrics(&self) -> MetricsSnapshot;
}

/// Moves from `prev` toward `target` by at most `max_step`. With a navigator the step
/// follows the local route; otherwise, or when the route gives nothing, a blocked
/// straight step falls back to sliding along one axis, then to a shorter step, then to
/// staying put.
pub(crate) fn walk_step(
    problem: &PlanningProblem,
    nav: Option<&LocalNav>,
    prev: State,
    target: State,
) -> State {
    if let Some(step) = nav.and_then(|n| follow_route(problem, prev, &n.route(prev, target))) {
        return step;
    }
    let max_step = problem.max_step_length;
    let mut d = target - prev;
    let len = d.norm();
    if len > max_step {
        d = d * (max_step / len);
    }
    let maze = &problem.maze;
    let candidate = prev + d;
    if maze.segment_clear(prev, candidate) {
        return candidate;
    }
    let along_x = State::new(prev.x + d.x, prev.y);
    let along_y = State::new(prev.x, prev.y + d.y);
    let slides = if d.x.abs() >= d.y.abs() {
        [along_x, along_y]
    } else {
        [along_y, along_x]
    };
    for s in slides {
        if s != prev && maze.segment_clear(prev, s) {
            return s;
        }
    }
    for frac in [0.75, 0.5, 0.25] {
        let s = prev + d * frac;
        if maze.segment_clear(prev, s) {
            return s;
        }
    }
    prev
}

/// One step along `route`: toward the farthest waypoint in line of sight, else to the
/// farthest waypoint in reach, else clipped toward the first waypoint.
fn follow_route(problem: &PlanningProblem, prev: State, route: &[State]) -> Option<State> {
    let max_step = problem.max_step_length;
    let maze = &problem.maze;
    let toward = |w: State| {
        let d = w - prev;
        let len = d.norm();
        if len <= max_step {
            w
        } else {
            prev + d * (max_step / len)
        }
    };
    if let Some(w) = route.iter().rev().find(|w| maze.segment_clear(prev, **w)) {
        let step = toward(*w);
        if maze.segment_clear(prev, step) {
            return Some(step);
        }
    }
    let reachable = route
        .iter()
        .rev()
        .find(|w| prev.distance(**w) <= max_step && maze.segment_clear(prev, **w));
    if let Some(w) = reachable {
        return Some(*w);
    }
    let step = toward(*route.first()?);
    maze.segment_clear(prev, step).then_some(step)
}

/// One packed row and its scratch space.
type PackedRow<'a> = (&'a mut [State], &'a mut [State]);

/// Per-iteration coefficients of one (possibly jumpy) denoising step.
#[derive(Debug, Clone, Copy)]
struct StepCoefficients {
    smoothing: f64,
    attraction_rate: f64,
    /// Number of fine steps this step stands for.
    span: usize,
}

impl StepCoefficients {
    fn smoothing(&self) -> f64 {
        if self.span == 1 {
            self.smoothing
        } else {
            1.0 - (1.0 - self.smoothing).powi(self.span as i32)
        }
    }

    fn attraction(&self, guidance_scale: f64) -> f64 {
        let per_step = (self.attraction_rate * guidance_scale).clamp(0.0, 1.0);
        if self.span == 1 {
            per_step
        } else {
            1.0 - (1.0 - per_step).powi(self.span as i32)
        }
    }
}

/// Seeded noise for one row: a jittered ramp per block from the previous block's
/// endpoint toward a uniformly drawn point of the maze bounding box.
fn init_row(
    states: &mut [State],
    anchor: State,
    block_len: usize,
    seed: u64,
    problem: &PlanningProblem,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (problem.maze.width() as f64, problem.maze.height() as f64);
    let jitter = 0.5 * problem.max_step_length;
    let mut from = anchor;
    for block in states.chunks_mut(block_len.max(1)) {
        let to = State::new(rng.gen_range(0.0..w), rng.gen_range(0.0..h));
        let n = block.len() as f64;
        for (j, s) in block.iter_mut().enumerate() {
            let frac = (j + 1) as f64 / n;
            let noise = State::new(
                rng.gen_range(-jitter..=jitter),
                rng.gen_range(-jitter..=jitter),
            );
            *s = from + (to - from) * frac + noise;
        }
        from = to;
    }
}

/// One denoising iteration over a single row, in place. `scratch` must be at least as
/// long as `states`.
fn denoise_step(
    states: &mut [State],
    scratch: &mut [State],
    guidance: &[f64],
    anchor: State,
    coefficients: StepCoefficients,
    problem: &PlanningProblem,
    nav: Option<&LocalNav>,
) {
    let n = states.len();
    if n == 0 {
        return;
    }
    let lambda = coefficients.smoothing();
    scratch[..n].copy_from_slice(states);
    // interior smoothing; the free end keeps its position
    for i in 0..n.saturating_sub(1) {
        let left = if i == 0 { anchor } else { scratch[i - 1] };
        let right = scratch[i + 1];
        states[i] = scratch[i] * (1.0 - lambda) + (left + right) * (lambda * 0.5);
    }
    let goal = problem.goal();
    for (s, &g) in states.iter_mut().zip(guidance) {
        let alpha = coefficients.attraction(g);
        *s = *s + (goal - *s) * alpha;
        *s = problem.maze.project_to_free(*s);
    }
    let mut prev = anchor;
    for s in states.iter_mut() {
        *s = walk_step(problem, nav, prev, *s);
        prev = *s;
    }
}

/// A row of the packed block: where it lives and how to denoise it.
#[derive(Debug, Clone)]
struct RowSpec {
    anchor: State,
    len: usize,
    block_len: usize,
    seed: u64,
    guidance: Vec<f64>,
}

fn expansion_row(request: &SamplerRequest, problem: &PlanningProblem) -> RowSpec {
    let room = (problem.horizon + 1).saturating_sub(request.prefix.len());
    let len = request.subplan_length.max(1).min(room.max(1));
    RowSpec {
        anchor: request.prefix.last(),
        len,
        block_len: len,
        seed: request.rng_seed,
        guidance: vec![request.action.guidance_scale; len],
    }
}

fn completion_row(request: &CompletionRequest, problem: &PlanningProblem) -> RowSpec {
    let block = request.subplan_length.max(1);
    let room = (problem.horizon + 1).saturating_sub(request.prefix.len());
    let len = (request.remaining_subplans * block).min(room);
    let fallback = request
        .schedule
        .actions
        .last()
        .map_or(0.0, |a| a.guidance_scale);
    let guidance = (0..len)
        .map(|i| {
            request
                .schedule
                .actions
                .get(i / block)
                .map_or(fallback, |a| a.guidance_scale)
        })
        .collect();
    RowSpec {
        anchor: request.prefix.last(),
        len,
        block_len: block,
        seed: request.rng_seed,
        guidance,
    }
}

/// Deterministic CPU stand-in for a guided diffusion planner.
pub struct SurrogateDenoiser {
    smoothing: f64,
    attraction_rate: f64,
    view_steps: usize,
    pool: Option<ThreadPool>,
    metrics: SamplerMetrics,
    navigators: Mutex<Vec<(u64, usize, Arc<LocalNav>)>>,
}

fn maze_fingerprint(maze: &GridMaze) -> u64 {
    let mut h = DefaultHasher::new();
    maze.width().hash(&mut h);
    maze.height().hash(&mut h);
    for row in 0..maze.height() {
        for col in 0..maze.width() {
            maze.is_blocked_cell(col, row).hash(&mut h);
        }
    }
    h.finish()
}

impl std::fmt::Debug for SurrogateDenoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SurrogateDenoiser")
            .field("smoothing", &self.smoothing)
            .field("attraction_rate", &self.attraction_rate)
            .field("view_steps", &self.view_steps)
            .field("workers", &self.worker_count())
            .finish()
    }
}

impl Default for SurrogateDenoiser {
    fn default() -> Self {
        Self::new(1)
    }
}

impl SurrogateDenoiser {
    pub const DEFAULT_SMOOTHING: f64 = 0.5;
    pub const DEFAULT_ATTRACTION_RATE: f64 = 0.1;
    pub const DEFAULT_VIEW_STEPS: usize = 3;
    /// Upper bound on the window half-width in cells.
    pub const MAX_VIEW_RADIUS: usize = 24;

    /// `workers > 1` distributes batched rows over a dedicated thread pool.
    pub fn new(workers: usize) -> Self {
        let pool = (workers > 1).then(|| {
            ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .expect("failed to build sampler worker pool")
        });
        Self {
            smoothing: Self::DEFAULT_SMOOTHING,
            attraction_rate: Self::DEFAULT_ATTRACTION_RATE,
            view_steps: Self::DEFAULT_VIEW_STEPS,
            pool,
            metrics: SamplerMetrics::default(),
            navigators: Mutex::new(Vec::new()),
        }
    }

    pub fn worker_count(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    /// Reach of the walker's window in plan steps; 0 walks in straight lines.
    /// Per-iteration pull toward the goal at guidance scale 1.
    pub fn with_attraction_rate(mut self, rate: f64) -> Self {
        self.attraction_rate = rate;
        self
    }

    pub fn with_view_steps(mut self, steps: usize) -> Self {
        self.view_steps = steps;
        self
    }

    pub fn view_steps(&self) -> usize {
        self.view_steps
    }

    /// Window half-width in cells for `problem`.
    pub fn view_radius(&self, problem: &PlanningProblem) -> usize {
        let cells = (self.view_steps as f64 * problem.max_step_length).round() as usize;
        cells.min(Self::MAX_VIEW_RADIUS)
    }

    fn navigator(&self, problem: &PlanningProblem) -> Option<Arc<LocalNav>> {
        let radius = self.view_radius(problem);
        if radius == 0 {
            return None;
        }
        let key = maze_fingerprint(&problem.maze);
        let mut cache = self.navigators.lock().expect("navigator cache poisoned");
        if let Some((_, _, nav)) = cache.iter().find(|(k, r, _)| *k == key && *r == radius) {
            return Some(Arc::clone(nav));
        }
        let nav = Arc::new(LocalNav::new(&problem.maze, radius));
        cache.push((key, radius, Arc::clone(&nav)));
        Some(nav)
    }

    fn coefficients(&self, span: usize) -> StepCoefficients {
        StepCoefficients {
            smoothing: self.smoothing,
            attraction_rate: self.attraction_rate,
            span,
        }
    }

    /// Runs every iteration on one row.
    fn denoise_single(
        &self,
        row: &RowSpec,
        spans: &[usize],
        problem: &PlanningProblem,
    ) -> Vec<State> {
        let mut states = vec![State::default(); row.len];
        let mut scratch = vec![State::default(); row.len];
        let nav = self.navigator(problem);
        init_row(&mut states, row.anchor, row.block_len, row.seed, problem);
        for &span in spans {
            denoise_step(
                &mut states,
                &mut scratch,
                &row.guidance,
                row.anchor,
                self.coefficients(span),
                problem,
                nav.as_deref(),
            );
        }
        self.metrics.record(1, spans.len() as u64, row.len as u64);
        states
    }

    /// Packs rows into one block padded with each row's anchor and advances all rows
    /// one iteration at a time.
    fn denoise_packed(
        &self,
        rows: &[RowSpec],
        spans: &[usize],
        problem: &PlanningProblem,
    ) -> Vec<Vec<State>> {
        if rows.is_empty() {
            return Vec::new();
        }
        let width = rows.iter().map(|r| r.len).max().unwrap_or(0).max(1);
        let mut block = vec![State::default(); rows.len() * width];
        let mut scratch = vec![State::default(); rows.len() * width];
        let mut guidance = vec![0.0; rows.len() * width];
        let nav = self.navigator(problem);
        let nav = nav.as_deref();
        for (i, row) in rows.iter().enumerate() {
            let cells = &mut block[i * width..(i + 1) * width];
            cells.fill(row.anchor);
            init_row(
                &mut cells[..row.len],
                row.anchor,
                row.block_len,
                row.seed,
                problem,
            );
            guidance[i * width..i * width + row.len].copy_from_slice(&row.guidance);
        }
        for &span in spans {
            let coefficients = self.coefficients(span);
            let step = |((cells, tmp), (g, row)): (PackedRow<'_>, (&[f64], &RowSpec))| {
                denoise_step(
                    &mut cells[..row.len],
                    tmp,
                    &g[..row.len],
                    row.anchor,
                    coefficients,
                    problem,
                    nav,
                )
            };
            match &self.pool {
                Some(pool) => pool.install(|| {
                    block
                        .par_chunks_mut(width)
                        .zip(scratch.par_chunks_mut(width))
                        .zip(guidance.par_chunks(width).zip(rows.par_iter()))
                        .for_each(step)
                }),
                None => block
                    .chunks_mut(width)
                    .zip(scratch.chunks_mut(width))
                    .zip(guidance.chunks(width).zip(rows.iter()))
                    .for_each(step),
            }
        }
        let total: u64 = rows.iter().map(|r| r.len as u64).sum();
        self.metrics
            .record(rows.len() as u64, spans.len() as u64, total);
        rows.iter()
            .enumerate()
            .map(|(i, row)| block[i * width..i * width + row.len].to_vec())
            .collect()
    }

    fn expansion_spans(budget: &SamplerBudget) -> Vec<usize> {
        vec![1; budget.denoise_steps()]
    }

    fn completion_spans(budget: &SamplerBudget) -> Vec<usize> {
        budget.jumpy_spans().collect()
    }
}

fn append(prefix: &Trajectory, tail: Vec<State>) -> Trajectory {
    let mut out = prefix.clone();
    out.extend_from(&tail);
    out
}

impl SubplanSampler for SurrogateDenoiser {
    fn expand_subplan(
        &self,
        request: &SamplerRequest,
        budget: &SamplerBudget,
        problem: &PlanningProblem,
    ) -> Subplan {
        let row = expansion_row(request, problem);
        Subplan::denoised(self.denoise_single(&row, &Self::expansion_spans(budget), problem))
    }

    fn complete_trajectory(
        &self,
        request: &CompletionRequest,
        budget: &SamplerBudget,
        problem: &PlanningProblem,
    ) -> Trajectory {
        let row = completion_row(request, problem);
        if row.len == 0 {
            return request.prefix.clone();
        }
        append(
            &request.prefix,
            self.denoise_single(&row, &Self::completion_spans(budget), problem),
        )
    }

    fn expand_batch(
        &self,
        requests: &[SamplerRequest],
        budget: &SamplerBudget,
        problem: &PlanningProblem,
    ) -> Vec<Subplan> {
        let rows: Vec<RowSpec> = requests.iter().map(|r| expansion_row(r, problem)).collect();
        self.denoise_packed(&rows, &Self::expansion_spans(budget), problem)
            .into_iter()
            .map(Subplan::denoised)
            .collect()
    }

    fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        budget: &SamplerBudget,
        problem: &PlanningProblem,
    ) -> Vec<Trajectory> {
        let rows: Vec<RowSpec> = requests
            .iter()
            .map(|r| completion_row(r, problem))
            .collect();
        // rows with nothing left to fill are answered without denoising
        let active: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].len > 0).collect();
        let active_rows: Vec<RowSpec> = active.iter().map(|&i| rows[i].clone()).collect();
        let mut filled = self
            .denoise_packed(&active_rows, &Self::completion_spans(budget), problem)
            .into_iter();
        let mut next_active = active.iter().peekable();
        requests
            .iter()
            .enumerate()
            .map(|(i, req)| {
                if next_active.peek() == Some(&&i) {
                    next_active.next();
                    append(
                        &req.prefix,
                        filled.next().expect("one output per active row"),
                    )
                } else {
                    req.prefix.clone()
                }
            })
            .collect()
    }

    fn metrics(&self) -> MetricsSnapshot {
        self.metrics.snapshot()
    }
}
