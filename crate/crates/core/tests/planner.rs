use std::path::PathBuf;
use std::time::Duration;

use fastmctd::bench::load_problem;
use fastmctd::core_model::{
    is_plausible, load_maze, trajectory_reward, GuidanceSchedule, PlanningProblem, State,
    Trajectory,
};
use fastmctd::cost_model::empirical_cost;
use fastmctd::planner::{
    fast_mctd_plan, fast_mctd_search, fast_replan_plan, mctd_plan, mctd_search, replan_loop,
    smctd_plan, PlanResult, PlannerConfig, PlannerError,
};
use fastmctd::sampler::{SamplerBudget, SurrogateDenoiser};

fn fixture(side: usize) -> PlanningProblem {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("fixtures/maze{side}.txt"));
    load_problem(&path).unwrap()
}

fn walled_off(horizon: usize) -> PlanningProblem {
    let maze = load_maze("S....#.\n.....#.\n.....#G\n").unwrap();
    PlanningProblem::new(maze, horizon, 0.5, 1.0).unwrap()
}

fn sequential(seed: u64) -> PlannerConfig {
    PlannerConfig {
        parallelism: 1,
        seed,
        ..PlannerConfig::default()
    }
}

#[test]
fn start_at_goal_succeeds_at_once() {
    let maze = load_maze("S..\n..G\n").unwrap();
    let maze = maze.with_start(maze.goal()).unwrap();
    let problem = PlanningProblem::new(maze, 20, 0.5, 1.0).unwrap();
    let sampler = SurrogateDenoiser::default();
    let result = mctd_plan(&problem, &sampler, &sequential(0)).unwrap();
    assert!(result.success);
    assert_eq!(result.reward, 1.0);
    assert!(result.iterations_used <= 1);
}

#[test]
fn walled_off_goal_spends_the_budget() {
    let problem = walled_off(40);
    let sampler = SurrogateDenoiser::default();
    let config = PlannerConfig {
        max_iterations: 60,
        ..sequential(3)
    };
    let result = mctd_plan(&problem, &sampler, &config).unwrap();
    assert!(!result.success);
    assert_eq!(result.reward, 0.0);
    assert_eq!(result.iterations_used, 60);
    assert!(result.diagnostic.is_some());
}

#[test]
fn sequential_planner_rejects_parallel_configs() {
    let sampler = SurrogateDenoiser::default();
    let err = mctd_plan(&walled_off(20), &sampler, &PlannerConfig::default()).unwrap_err();
    assert!(matches!(err, PlannerError::NotSequential(200)));
}

#[test]
fn dense_search_solves_the_small_fixture() {
    let problem = fixture(15);
    let sampler = SurrogateDenoiser::default();
    let solved = (0..50)
        .filter(|&s| {
            let config = PlannerConfig {
                coarsen_interval: 1,
                ..sequential(s)
            };
            mctd_plan(&problem, &sampler, &config).unwrap().success
        })
        .count();
    assert!(solved >= 45, "{solved}/50");
}

#[test]
fn traces_match_when_nothing_is_solved() {
    // an unreachable goal keeps both searches running for the whole budget
    let problem = walled_off(80);
    let sampler = SurrogateDenoiser::default();
    for seed in 0..10 {
        let config = PlannerConfig {
            ras_weight: 0.0,
            coarsen_interval: 1,
            max_iterations: 100,
            ..sequential(seed)
        };
        let (a, tree_a) = mctd_search(&problem, &sampler, &config).unwrap();
        let (b, tree_b) = fast_mctd_search(&problem, &sampler, &config).unwrap();
        assert_eq!(tree_a.dump(), tree_b.dump());
        assert_eq!(a.iterations_used, 100);
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.expansions, b.expansions);
    }
}

#[test]
fn rollouts_are_counted_individually() {
    let problem = walled_off(80);
    let sampler = SurrogateDenoiser::default();
    let config = PlannerConfig {
        parallelism: 7,
        coarsen_interval: 1,
        max_iterations: 50,
        ..PlannerConfig::default()
    };
    let result = fast_mctd_plan(&problem, &sampler, &config).unwrap();
    assert_eq!(result.iterations_used, 50);
    assert_eq!(result.rounds, 8);
    assert_eq!(result.selections, 50);
}

#[test]
fn successes_are_sound_and_rewards_recompute() {
    let problem = fixture(15);
    let sampler = SurrogateDenoiser::default();
    for seed in 0..10 {
        let config = PlannerConfig {
            seed,
            ..PlannerConfig::default()
        };
        let result = fast_mctd_plan(&problem, &sampler, &config).unwrap();
        assert_eq!(
            result.reward,
            trajectory_reward(&problem, &result.trajectory)
        );
        if result.success {
            assert!(is_plausible(&problem, &result.trajectory));
            assert!(problem.reaches_goal(result.trajectory.last()));
            assert!(result.reward > 0.0);
        }
    }
}

#[test]
fn sparse_search_needs_fewer_denoising_iterations() {
    let problem = fixture(31);
    let sampler = SurrogateDenoiser::default();
    for seed in 0..5 {
        let dense = mctd_plan(
            &problem,
            &sampler,
            &PlannerConfig {
                coarsen_interval: 1,
                ..sequential(seed)
            },
        )
        .unwrap();
        let sparse = smctd_plan(&problem, &sampler, &sequential(seed)).unwrap();
        assert!(
            sparse.denoise_iterations < dense.denoise_iterations,
            "seed {seed}: {} vs {}",
            sparse.denoise_iterations,
            dense.denoise_iterations
        );
    }
}

#[test]
fn very_coarse_intervals_lose_the_plan() {
    let problem = fixture(31);
    let sampler = SurrogateDenoiser::default();
    let solved = (0..5)
        .filter(|&seed| {
            let config = PlannerConfig {
                coarsen_interval: 50,
                seed,
                ..PlannerConfig::default()
            };
            fast_mctd_plan(&problem, &sampler, &config).unwrap().success
        })
        .count();
    assert_eq!(solved, 0);
}

#[test]
fn empirical_cost_counts_denoising_iterations() {
    // 10 rollouts: 10 expansions of D iterations plus 10 jumpy completions of D / jump
    let problem = walled_off(100);
    let sampler = SurrogateDenoiser::default();
    let config = PlannerConfig {
        max_iterations: 10,
        subplan_length: 10,
        ..sequential(0)
    };
    let result = mctd_plan(&problem, &sampler, &config).unwrap();
    assert_eq!(result.expansions, 10);
    assert_eq!(empirical_cost(&result), 220.0);

    let doubled = PlannerConfig {
        budget: SamplerBudget::new(40, 20).unwrap(),
        ..config
    };
    let result = mctd_plan(&problem, &sampler, &doubled).unwrap();
    assert_eq!(empirical_cost(&result), 420.0);

    let maze = load_maze("S..\n..G\n").unwrap();
    let at_goal =
        PlanningProblem::new(maze.with_start(maze.goal()).unwrap(), 20, 0.5, 1.0).unwrap();
    let result = mctd_plan(&at_goal, &sampler, &sequential(0)).unwrap();
    assert_eq!(empirical_cost(&result), 0.0);
}

fn scripted(states: Vec<State>) -> PlanResult {
    PlanResult {
        success: false,
        trajectory: Trajectory::new(states).unwrap(),
        schedule: GuidanceSchedule::default(),
        reward: 0.0,
        iterations_used: 2,
        expansions: 1,
        selections: 1,
        duplicate_selection_fraction: 0.0,
        wall_clock: Duration::ZERO,
        denoise_iterations: 5,
        rounds: 1,
        planning_calls: 1,
        diagnostic: None,
    }
}

fn corridor(horizon: usize) -> PlanningProblem {
    PlanningProblem::new(load_maze("S.........G\n").unwrap(), horizon, 0.5, 1.0).unwrap()
}

fn straight_ahead(problem: &PlanningProblem, _seed: u64) -> Result<PlanResult, PlannerError> {
    let s = problem.start();
    Ok(scripted(
        (0..60)
            .map(|i| State::new((s.x + i as f64).min(10.5), 0.5))
            .collect(),
    ))
}

#[test]
fn replan_solved_within_the_open_loop_is_one_call() {
    let config = PlannerConfig::default();
    let result = replan_loop(&corridor(30), &mut straight_ahead, &config).unwrap();
    assert!(result.success);
    assert_eq!(result.planning_calls, 1);
    assert_eq!(result.trajectory.len(), 11);
    assert_eq!(result.iterations_used, 2);
    assert_eq!(result.denoise_iterations, 5);
}

#[test]
fn replan_with_single_step_loops_calls_once_per_step() {
    let config = PlannerConfig {
        open_loop_horizon: 1,
        ..PlannerConfig::default()
    };
    let result = replan_loop(&corridor(30), &mut straight_ahead, &config).unwrap();
    assert!(result.success);
    assert_eq!(result.planning_calls, 10);
    assert_eq!(result.trajectory.len() - 1, 10);
    assert_eq!(result.iterations_used, 20);
}

#[test]
fn replan_stops_past_the_horizon() {
    let mut shuttle = |problem: &PlanningProblem, _seed: u64| -> Result<PlanResult, PlannerError> {
        let s = problem.start();
        let other = State::new(if s.x < 1.0 { 1.5 } else { 0.5 }, 0.5);
        Ok(scripted(
            (0..=10)
                .map(|i| if i % 2 == 1 { other } else { s })
                .collect(),
        ))
    };
    for open_loop in [1, 3, 7, 50] {
        let config = PlannerConfig {
            open_loop_horizon: open_loop,
            ..PlannerConfig::default()
        };
        let problem = corridor(20);
        let result = replan_loop(&problem, &mut shuttle, &config).unwrap();
        let executed = result.trajectory.len() - 1;
        assert!(!result.success);
        assert!(executed > problem.horizon);
        assert!(executed <= problem.horizon + open_loop);
        assert_eq!(result.planning_calls, executed.div_ceil(open_loop.min(10)));
    }
}

#[test]
fn replanning_fast_search_reaches_the_goal() {
    let problem = fixture(15);
    let sampler = SurrogateDenoiser::default();
    let config = PlannerConfig {
        seed: 4,
        ..PlannerConfig::default()
    };
    let result = fast_replan_plan(&problem, &sampler, &config).unwrap();
    assert!(result.success, "{:?}", result.diagnostic);
    assert!(is_plausible(&problem, &result.trajectory));
    assert!(result.planning_calls >= 1);
}
