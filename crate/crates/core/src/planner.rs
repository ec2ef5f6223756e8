//! Planner variants over the search tree and the sampler contract.
//!
//! * [`mctd_plan`]: one selection, expansion, simulation and backup per iteration.
//! * [`parallel_mctd_plan`]: rounds of `K` selections under redundancy-aware UCT with
//!   batched expansion, batched simulation and delayed backup.
//! * [`sparse_plan`]: runs an inner planner on the coarsened problem and lifts the result.
//! * [`fast_mctd_plan`]: the parallel planner wrapped in the sparse planner.
//! * [`replan_loop`]: receding-horizon execution of any planner.
//!
//! Iteration budgets count rollouts, so every variant does comparable work.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::core_model::{
    default_guidance_set, derive_seed, is_plausible, lift_plan, trajectory_reward,
    GuidanceSchedule, MetaAction, PlanningProblem, State, Trajectory,
};
use crate::sampler::{
    BudgetError, CompletionRequest, SamplerBudget, SamplerRequest, SubplanSampler,
};
use crate::search_tree::{NodeId, Tree, TreeError};

/// Mixed into completion seeds so they never collide with expansion seeds.
const COMPLETION_SALT: u64 = 0xC0DE_5EED_0000_0000;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error("sequential planner requires parallelism 1, got {0}")]
    NotSequential(usize),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    /// Rollouts per round (K).
    pub parallelism: usize,
    /// Weight of in-batch visit counts in selection (w).
    pub ras_weight: f64,
    /// Exploration constant (beta).
    pub exploration: f64,
    /// Coarsening interval (H); 1 plans densely.
    pub coarsen_interval: usize,
    /// States per subplan (L).
    pub subplan_length: usize,
    /// Rollout budget.
    pub max_iterations: usize,
    pub guidance_set: Vec<MetaAction>,
    pub budget: SamplerBudget,
    pub open_loop_horizon: usize,
    /// Children expanded per selection (m); 1 disables leaf parallelism.
    pub leaf_parallel: usize,
    pub worker_count: usize,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            parallelism: 200,
            ras_weight: 1.0,
            exploration: 1.0,
            coarsen_interval: 5,
            subplan_length: 10,
            max_iterations: 500,
            guidance_set: default_guidance_set(),
            budget: SamplerBudget::default(),
            open_loop_horizon: 50,
            leaf_parallel: 1,
            worker_count: 1,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    /// The settings the sequential planner expects: one rollout per round, plain UCT,
    /// dense planning.
    pub fn sequential(&self) -> Self {
        Self {
            parallelism: 1,
            ras_weight: 0.0,
            coarsen_interval: 1,
            leaf_parallel: 1,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |msg: String| Err(PlannerError::InvalidConfig(msg));
        if self.parallelism < 1 {
            return bad("parallelism must be >= 1".into());
        }
        if self.coarsen_interval < 1 {
            return bad("coarsen_interval must be >= 1".into());
        }
        if !(self.ras_weight >= 0.0 && self.ras_weight.is_finite()) {
            return bad(format!("ras_weight must be >= 0, got {}", self.ras_weight));
        }
        if !(self.exploration >= 0.0 && self.exploration.is_finite()) {
            return bad(format!(
                "exploration must be >= 0, got {}",
                self.exploration
            ));
        }
        if self.subplan_length < 1 {
            return bad("subplan_length must be >= 1".into());
        }
        if self.leaf_parallel < 1 {
            return bad("leaf_parallel must be >= 1".into());
        }
        if self.open_loop_horizon < 1 {
            return bad("open_loop_horizon must be >= 1".into());
        }
        if self.worker_count < 1 {
            return bad("worker_count must be >= 1".into());
        }
        if self.guidance_set.is_empty() {
            return Err(TreeError::EmptyGuidanceSet.into());
        }
        if self
            .guidance_set
            .iter()
            .any(|a| !a.guidance_scale.is_finite())
        {
            return bad("guidance scales must be finite".into());
        }
        SamplerBudget::new(self.budget.denoise_steps(), self.budget.jump_interval())?;
        Ok(())
    }

    /// Number of subplans needed to cover the horizon (S).
    pub fn max_depth(&self, problem: &PlanningProblem) -> usize {
        problem.horizon.div_ceil(self.subplan_length).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub success: bool,
    pub trajectory: Trajectory,
    pub schedule: GuidanceSchedule,
    /// Reward of `trajectory` on the problem that was planned for.
    pub reward: f64,
    /// Rollouts performed.
    pub iterations_used: usize,
    pub expansions: usize,
    pub selections: usize,
    /// Share of selections that returned a leaf already selected in the same round.
    pub duplicate_selection_fraction: f64,
    pub wall_clock: Duration,
    pub denoise_iterations: u64,
    pub rounds: usize,
    pub planning_calls: usize,
    pub diagnostic: Option<String>,
}

impl PlanResult {
    fn duplicates(&self) -> f64 {
        self.duplicate_selection_fraction * self.selections as f64
    }
}

/// Signature shared by the planners so they can be composed.
pub type PlannerFn = dyn Fn(&PlanningProblem, &dyn SubplanSampler, &PlannerConfig) -> Result<PlanResult, PlannerError>
    + Sync;

#[derive(Debug, Clone, Copy)]
enum Job {
    Expand { parent: NodeId, action: usize },
    Resimulate { node: NodeId, ordinal: usize },
}

/// Search state shared by the sequential and the parallel loops.
struct Search<'a> {
    problem: &'a PlanningProblem,
    sampler: &'a dyn SubplanSampler,
    config: &'a PlannerConfig,
    tree: Tree,
    max_depth: usize,
    best: Option<(f64, Trajectory, GuidanceSchedule)>,
    rollouts: usize,
    expansions: usize,
    selections: usize,
    duplicates: usize,
    rounds: usize,
    solved: bool,
    started: Instant,
    metrics_before: u64,
}

impl<'a> Search<'a> {
    fn new(
        problem: &'a PlanningProblem,
        sampler: &'a dyn SubplanSampler,
        config: &'a PlannerConfig,
    ) -> Result<Self, PlannerError> {
        config.validate()?;
        let tree = Tree::new(
            problem.start(),
            config.guidance_set.clone(),
            problem.reaches_goal(problem.start()),
        )?;
        Ok(Self {
            problem,
            sampler,
            config,
            tree,
            max_depth: config.max_depth(problem),
            best: None,
            rollouts: 0,
            expansions: 0,
            selections: 0,
            duplicates: 0,
            rounds: 0,
            solved: false,
            started: Instant::now(),
            metrics_before: sampler.metrics().denoise_iterations,
        })
    }

    fn done(&self) -> bool {
        self.solved || self.rollouts >= self.config.max_iterations
    }

    fn expansion_request(&self, parent: NodeId, action: usize) -> SamplerRequest {
        SamplerRequest {
            prefix: self.tree.prefix(parent),
            action: self.config.guidance_set[action],
            subplan_length: self.config.subplan_length,
            rng_seed: derive_seed(
                derive_seed(self.config.seed, parent.0 as u64),
                action as u64,
            ),
        }
    }

    fn completion_request(
        &self,
        node: NodeId,
        guidance: MetaAction,
        rollout: usize,
    ) -> CompletionRequest {
        let depth = self.tree.node(node).depth;
        let remaining = if self.tree.node(node).terminal {
            0
        } else {
            self.max_depth.saturating_sub(depth)
        };
        CompletionRequest {
            prefix: self.tree.prefix(node),
            schedule: GuidanceSchedule {
                actions: vec![guidance],
            },
            remaining_subplans: remaining,
            subplan_length: self.config.subplan_length,
            rng_seed: derive_seed(
                derive_seed(self.config.seed, node.0 as u64),
                rollout as u64 ^ COMPLETION_SALT,
            ),
        }
    }

    /// Guidance used when re-simulating `node` for the `ordinal`-th time in a round.
    fn resimulation_guidance(&self, ordinal: usize) -> MetaAction {
        let set = &self.config.guidance_set;
        set[ordinal % set.len()]
    }

    fn child_is_terminal(&self, parent: NodeId, states: &[State]) -> bool {
        let depth = self.tree.node(parent).depth + 1;
        let prefix_len = self.tree.prefix(parent).len() + states.len();
        depth >= self.max_depth
            || prefix_len > self.problem.horizon
            || states.iter().any(|s| self.problem.reaches_goal(*s))
    }

    /// Runs one batch of jobs: expansions, then completions, then delayed backup.
    fn run_jobs(&mut self, jobs: &[Job], batched: bool) -> Result<(), PlannerError> {
        let budget = &self.config.budget;
        let expand_requests: Vec<SamplerRequest> = jobs
            .iter()
            .filter_map(|job| match *job {
                Job::Expand { parent, action } => Some(self.expansion_request(parent, action)),
                Job::Resimulate { .. } => None,
            })
            .collect();
        let subplans = if !batched {
            debug_assert!(jobs.len() == 1);
            expand_requests
                .iter()
                .map(|r| self.sampler.expand_subplan(r, budget, self.problem))
                .collect()
        } else {
            self.sampler
                .expand_batch(&expand_requests, budget, self.problem)
        };
        let mut subplans = subplans.into_iter();
        let mut targets = Vec::with_capacity(jobs.len());
        for job in jobs {
            match *job {
                Job::Expand { parent, action } => {
                    let subplan = subplans.next().expect("one subplan per expansion");
                    let terminal = self.child_is_terminal(parent, &subplan.states);
                    let child = self.tree.expand_index(parent, action, subplan, terminal)?;
                    self.expansions += 1;
                    targets.push((child, self.config.guidance_set[action]));
                }
                Job::Resimulate { node, ordinal } => {
                    targets.push((node, self.resimulation_guidance(ordinal)));
                }
            }
        }
        let completion_requests: Vec<CompletionRequest> = targets
            .iter()
            .enumerate()
            .map(|(i, &(node, guidance))| {
                self.completion_request(node, guidance, self.rollouts + i)
            })
            .collect();
        let trajectories = if !batched {
            completion_requests
                .iter()
                .map(|r| self.sampler.complete_trajectory(r, budget, self.problem))
                .collect()
        } else {
            self.sampler
                .complete_batch(&completion_requests, budget, self.problem)
        };
        let mut results = Vec::with_capacity(jobs.len());
        for (&(node, _), trajectory) in targets.iter().zip(trajectories) {
            let reward = trajectory_reward(self.problem, &trajectory);
            if reward > 0.0 {
                self.solved = true;
            }
            if self.best.as_ref().is_none_or(|(r, _, _)| reward > *r) {
                let mut schedule = self.tree.schedule(node);
                if let Some(&last) = schedule.actions.last() {
                    let blocks = trajectory
                        .len()
                        .saturating_sub(1)
                        .div_ceil(self.config.subplan_length);
                    schedule
                        .actions
                        .resize(blocks.max(schedule.actions.len()), last);
                }
                self.best = Some((reward, trajectory, schedule));
            }
            results.push((node, reward));
        }
        self.tree.backpropagate_batch(&results);
        self.rollouts += jobs.len();
        self.rounds += 1;
        Ok(())
    }

    fn finish(self) -> (PlanResult, Tree) {
        let denoise_iterations = self.sampler.metrics().denoise_iterations - self.metrics_before;
        let (success, trajectory, schedule) = match self.best {
            Some((reward, trajectory, schedule)) if reward > 0.0 => (true, trajectory, schedule),
            _ => match self.tree.best_path() {
                Ok((schedule, trajectory)) => (false, trajectory, schedule),
                Err(_) => (
                    false,
                    Trajectory::single(self.problem.start()),
                    GuidanceSchedule::default(),
                ),
            },
        };
        let reward = trajectory_reward(self.problem, &trajectory);
        let result = PlanResult {
            success,
            reward,
            trajectory,
            schedule,
            iterations_used: self.rollouts,
            expansions: self.expansions,
            selections: self.selections,
            duplicate_selection_fraction: if self.selections == 0 {
                0.0
            } else {
                self.duplicates as f64 / self.selections as f64
            },
            wall_clock: self.started.elapsed(),
            denoise_iterations,
            rounds: self.rounds,
            planning_calls: 1,
            diagnostic: (!success).then(|| "rollout budget exhausted".to_string()),
        };
        (result, self.tree)
    }
}

/// Sequential MCTD: select, expand one child, simulate it, back up, repeat.
pub fn mctd_plan(
    problem: &PlanningProblem,
    sampler: &dyn SubplanSampler,
    config: &PlannerConfig,
) -> Result<PlanResult, PlannerError> {
    mctd_search(problem, sampler, config).map(|(result, _)| result)
}

/// [`mctd_plan`] that also returns the final search tree.
pub fn mctd_search(
    problem: &PlanningProblem,
    sampler: &dyn SubplanSampler,
    config: &PlannerConfig,
) -> Result<(PlanResult, Tree), PlannerError> {
    if config.parallelism != 1 {
        return Err(PlannerError::NotSequential(config.parallelism));
    }
    let mut search = Search::new(problem, sampler, config)?;
    while !search.done() {
        search.tree.reset_temp_counts();
        let path = search
            .tree
            .select_leaf(config.exploration, config.ras_weight);
        let leaf = *path.last().expect("path holds the root");
        search.selections += 1;
        let next = if search.tree.node(leaf).terminal {
            None
        } else {
            search.tree.unexpanded_actions(leaf).next()
        };
        let job = match next {
            Some(action) => Job::Expand {
                parent: leaf,
                action,
            },
            None => Job::Resimulate {
                node: leaf,
                ordinal: 0,
            },
        };
        search.run_jobs(&[job], false)?;
    }
    Ok(search.finish())
}

/// Parallel MCTD in dense space: each round selects up to `K` leaves under
/// redundancy-aware UCT, then expands and simulates them as one batch.
pub fn parallel_mctd_plan(
    problem: &PlanningProblem,
    sampler: &dyn SubplanSampler,
    config: &PlannerConfig,
) -> Result<PlanResult, PlannerError> {
    parallel_mctd_search(problem, sampler, config).map(|(result, _)| result)
}

/// [`parallel_mctd_plan`] that also returns the final search tree.
pub fn parallel_mctd_search(
    problem: &PlanningProblem,
    sampler: &dyn SubplanSampler,
    config: &PlannerConfig,
) -> Result<(PlanResult, Tree), PlannerError> {
    let mut search = Search::new(problem, sampler, config)?;
    let (beta, w, m) = (config.exploration, config.ras_weight, config.leaf_parallel);
    while !search.done() {
        search.tree.reset_temp_counts();
        let quota = config
            .parallelism
            .min(config.max_iterations - search.rollouts);
        let mut jobs: Vec<Job> = Vec::with_capacity(quota);
        let mut picks: HashMap<NodeId, usize> = HashMap::new();
        let mut claimed: HashMap<NodeId, Vec<usize>> = HashMap::new();
        while jobs.len() < quota {
            let path = search.tree.select_leaf(beta, w);
            let leaf = *path.last().expect("path holds the root");
            search.selections += 1;
            let ordinal = picks.entry(leaf).or_insert(0);
            if *ordinal > 0 {
                search.duplicates += 1;
            }
            let this_ordinal = *ordinal;
            *ordinal += 1;

            let taken = claimed.entry(leaf).or_default();
            let free: Vec<usize> = if search.tree.node(leaf).terminal {
                Vec::new()
            } else {
                search
                    .tree
                    .unexpanded_actions(leaf)
                    .filter(|a| !taken.contains(a))
                    .take(m.min(quota - jobs.len()))
                    .collect()
            };
            if free.is_empty() {
                jobs.push(Job::Resimulate {
                    node: leaf,
                    ordinal: this_ordinal,
                });
            } else {
                for action in free {
                    taken.push(action);
                    jobs.push(Job::Expand {
                        parent: leaf,
                        action,
                    });
                }
            }
        }
        search.run_jobs(&jobs, true)?;
    }
    Ok(search.finish())
}

/// Plans with `inner` on the problem coarsened by `H`, then lifts the coarse plan with a
/// straight-line controller and re-scores it on the original problem.
pub fn sparse_plan(
    problem: &PlanningProblem,
    sampler: &dyn SubplanSampler,
    config: &PlannerConfig,
    inner: &PlannerFn,
) -> Result<PlanResult, PlannerError> {
    config.validate()?;
    let h = config.coarsen_interval;
    if h == 1 {
        return inner(problem, sampler, config);
    }
    let coarse = inner(&problem.coarsened(h), sampler, config)?;
    Ok(lift_result(problem, h, coarse))
}

/// Lifts a plan made on `problem.coarsened(h)` and re-scores it on `problem`.
fn lift_result(problem: &PlanningProblem, h: usize, coarse: PlanResult) -> PlanResult {
    match lift_plan(problem, &coarse.trajectory, h) {
        Ok(dense) => {
            let reward = trajectory_reward(problem, &dense);
            let success = coarse.success && reward > 0.0 && is_plausible(problem, &dense);
            let diagnostic = if success {
                None
            } else if coarse.success {
                Some("lifted plan does not reach the goal within the horizon".to_string())
            } else {
                coarse.diagnostic.clone()
            };
            PlanResult {
                success,
                trajectory: dense,
                reward,
                diagnostic,
                ..coarse
            }
        }
        Err(failure) => PlanResult {
            success: false,
            trajectory: Trajectory::single(problem.start()),
            reward: trajectory_reward(problem, &Trajectory::single(problem.start())),
            diagnostic: Some(format!("lift failed: {failure}")),
            ..coarse
        },
    }
}

/// Sparse planning wrapped around sequential MCTD.
pub fn smctd_plan(
    problem: &PlanningProblem,
    sampler: &dyn SubplanSampler,
    config: &PlannerConfig,
) -> Result<PlanResult, PlannerError> {
    let sequential = PlannerConfig {
        coarsen_interval: config.coarsen_interval,
        ..config.sequential()
    };
    sparse_plan(problem, sampler, &sequential, &mctd_plan)
}

/// Parallel MCTD over the coarsened problem; with `H = 1` it plans densely.
pub fn fast_mctd_plan(
    problem: &PlanningProblem,
    sampler: &dyn SubplanSampler,
    config: &PlannerConfig,
) -> Result<PlanResult, PlannerError> {
    sparse_plan(problem, sampler, config, &parallel_mctd_plan)
}

/// [`fast_mctd_plan`] that also returns the search tree, built over the coarsened
/// problem when `H > 1`.
pub fn fast_mctd_search(
    problem: &PlanningProblem,
    sampler: &dyn SubplanSampler,
    config: &PlannerConfig,
) -> Result<(PlanResult, Tree), PlannerError> {
    config.validate()?;
    let h = config.coarsen_interval;
    if h == 1 {
        return parallel_mctd_search(problem, sampler, config);
    }
    let (coarse, tree) = parallel_mctd_search(&problem.coarsened(h), sampler, config)?;
    Ok((lift_result(problem, h, coarse), tree))
}

/// Receding-horizon execution: plan from the current state, play back at most
/// `open_loop_horizon` steps, and plan again until the goal is reached or more than
/// `problem.horizon` steps have been executed. `planner` receives the problem re-rooted
/// at the current state and a per-call seed.
pub fn replan_loop(
    problem: &PlanningProblem,
    planner: &mut dyn FnMut(&PlanningProblem, u64) -> Result<PlanResult, PlannerError>,
    config: &PlannerConfig,
) -> Result<PlanResult, PlannerError> {
    config.validate()?;
    let started = Instant::now();
    let mut executed = vec![problem.start()];
    let mut total = PlanResult {
        success: false,
        trajectory: Trajectory::single(problem.start()),
        schedule: GuidanceSchedule::default(),
        reward: 0.0,
        iterations_used: 0,
        expansions: 0,
        selections: 0,
        duplicate_selection_fraction: 0.0,
        wall_clock: Duration::ZERO,
        denoise_iterations: 0,
        rounds: 0,
        planning_calls: 0,
        diagnostic: None,
    };
    let mut duplicates = 0.0;
    let mut current = problem.start();
    let mut stop_reason = None;
    while !problem.reaches_goal(current) {
        if executed.len() - 1 > problem.horizon {
            stop_reason = Some("executed steps exceed the horizon");
            break;
        }
        let rerooted = PlanningProblem {
            maze: problem
                .maze
                .with_start(current)
                .map_err(|e| PlannerError::InvalidConfig(e.to_string()))?,
            ..problem.clone()
        };
        let plan = planner(
            &rerooted,
            derive_seed(config.seed, total.planning_calls as u64),
        )?;
        total.planning_calls += 1;
        total.iterations_used += plan.iterations_used;
        total.expansions += plan.expansions;
        total.selections += plan.selections;
        total.denoise_iterations += plan.denoise_iterations;
        total.rounds += plan.rounds;
        total
            .schedule
            .actions
            .extend(plan.schedule.actions.iter().copied());
        duplicates += plan.duplicates();

        let steps = &plan.trajectory.states()[1..];
        if steps.is_empty() {
            stop_reason = Some("planner returned no steps");
            break;
        }
        for &next in steps.iter().take(config.open_loop_horizon) {
            if !problem.step_ok(current, next) || !problem.maze.is_free(next) {
                stop_reason = Some("plan contains an infeasible step");
                break;
            }
            executed.push(next);
            current = next;
            if problem.reaches_goal(current) {
                break;
            }
        }
        if stop_reason.is_some() {
            break;
        }
    }
    total.trajectory = Trajectory::from_states_unchecked(executed);
    total.reward = trajectory_reward(problem, &total.trajectory);
    total.success = total.reward > 0.0;
    total.duplicate_selection_fraction = if total.selections == 0 {
        0.0
    } else {
        duplicates / total.selections as f64
    };
    total.wall_clock = started.elapsed();
    total.diagnostic = if total.success {
        None
    } else {
        Some(
            stop_reason
                .unwrap_or("goal not reached within the horizon")
                .to_string(),
        )
    };
    Ok(total)
}

/// Fast MCTD run inside [`replan_loop`].
pub fn fast_replan_plan(
    problem: &PlanningProblem,
    sampler: &dyn SubplanSampler,
    config: &PlannerConfig,
) -> Result<PlanResult, PlannerError> {
    let mut inner = |p: &PlanningProblem, seed: u64| {
        let per_call = PlannerConfig {
            seed,
            ..config.clone()
        };
        fast_mctd_plan(p, sampler, &per_call)
    };
    replan_loop(problem, &mut inner, config)
}

/// Same as [`parallel_mctd_plan`] but without coarsening, whatever `H` says.
pub fn pmctd_plan(
    problem: &PlanningProblem,
    sampler: &dyn SubplanSampler,
    config: &PlannerConfig,
) -> Result<PlanResult, PlannerError> {
    parallel_mctd_plan(problem, sampler, config)
}
