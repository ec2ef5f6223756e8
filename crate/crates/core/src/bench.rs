//! Benchmark harness: planner selection, config overrides, sweeps, CSV output and
//! baseline/candidate comparison.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::core_model::{derive_seed, load_maze, MazeError, MetaAction, PlanningProblem};
use crate::planner::{
    fast_mctd_plan, fast_replan_plan, mctd_plan, pmctd_plan, smctd_plan, PlanResult, PlannerConfig,
    PlannerError,
};
use crate::sampler::{SamplerBudget, SubplanSampler, SurrogateDenoiser};

/// First line of every CSV this module writes; bump on any column change.
pub const CSV_VERSION_LINE: &str = "# fastmctd-bench v1";

pub const CSV_COLUMNS: [&str; 11] = [
    "planner",
    "sweep_param",
    "sweep_value",
    "seed",
    "success",
    "wall_clock_s",
    "iterations_used",
    "expansions",
    "denoise_iterations",
    "duplicate_selection_fraction",
    "reward",
];

/// Numeric columns, in CSV order, that get a mean and standard deviation.
const METRIC_COLUMNS: [&str; 7] = [
    "success",
    "wall_clock_s",
    "iterations_used",
    "expansions",
    "denoise_iterations",
    "duplicate_selection_fraction",
    "reward",
];

pub const AGGREGATE_SEED: &str = "aggregate";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown planner `{0}` (expected mctd, pmctd, smctd, fast or fast-replan)")]
    UnknownPlanner(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    ConfigSyntax { line: usize, text: String },
    #[error("bad sweep `{0}`: expected NAME=v1,v2,... with NAME in K, w, H, m, redundancy")]
    BadSweep(String),
    #[error("seeds must be >= 1")]
    NoSeeds,
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("maze {path}: {source}")]
    Maze { path: PathBuf, source: MazeError },
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema mismatch: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerKind {
    Mctd,
    Pmctd,
    Smctd,
    Fast,
    FastReplan,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 5] = [
        PlannerKind::Mctd,
        PlannerKind::Pmctd,
        PlannerKind::Smctd,
        PlannerKind::Fast,
        PlannerKind::FastReplan,
    ];

    pub fn run(
        self,
        problem: &PlanningProblem,
        sampler: &dyn SubplanSampler,
        config: &PlannerConfig,
    ) -> Result<PlanResult, PlannerError> {
        match self {
            PlannerKind::Mctd => mctd_plan(problem, sampler, &config.sequential()),
            PlannerKind::Pmctd => pmctd_plan(problem, sampler, config),
            PlannerKind::Smctd => smctd_plan(problem, sampler, config),
            PlannerKind::Fast => fast_mctd_plan(problem, sampler, config),
            PlannerKind::FastReplan => fast_replan_plan(problem, sampler, config),
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlannerKind::Mctd => "mctd",
            PlannerKind::Pmctd => "pmctd",
            PlannerKind::Smctd => "smctd",
            PlannerKind::Fast => "fast",
            PlannerKind::FastReplan => "fast-replan",
        })
    }
}

impl FromStr for PlannerKind {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlannerKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| BenchError::UnknownPlanner(s.to_string()))
    }
}

fn bad_value(key: &str, value: &str, reason: impl ToString) -> BenchError {
    BenchError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, BenchError>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e| bad_value(key, value, e))
}

/// Sets one config field. Keys are the field names; `K`, `w`, `beta`, `H`, `L`, `m`,
/// `D` and `workers` are accepted as short forms.
pub fn apply_override(
    config: &mut PlannerConfig,
    key: &str,
    value: &str,
) -> Result<(), BenchError> {
    let key = key.trim();
    match key {
        "parallelism" | "K" => config.parallelism = parse(key, value)?,
        "ras_weight" | "w" => config.ras_weight = parse(key, value)?,
        "exploration" | "beta" => config.exploration = parse(key, value)?,
        "coarsen_interval" | "H" => config.coarsen_interval = parse(key, value)?,
        "subplan_length" | "L" => config.subplan_length = parse(key, value)?,
        "max_iterations" => config.max_iterations = parse(key, value)?,
        "open_loop_horizon" => config.open_loop_horizon = parse(key, value)?,
        "leaf_parallel" | "m" => config.leaf_parallel = parse(key, value)?,
        "worker_count" | "workers" => config.worker_count = parse(key, value)?,
        "seed" => config.seed = parse(key, value)?,
        "guidance_set" => {
            config.guidance_set = value
                .split(',')
                .map(|v| parse::<f64>(key, v).map(MetaAction::new))
                .collect::<Result<_, _>>()?;
        }
        "denoise_steps" | "D" => {
            let steps: usize = parse(key, value)?;
            let jump = config.budget.jump_interval().min(steps.max(1));
            config.budget =
                SamplerBudget::new(steps, jump).map_err(|e| bad_value(key, value, e))?;
        }
        "jump_interval" => {
            let jump: usize = parse(key, value)?;
            config.budget = SamplerBudget::new(config.budget.denoise_steps(), jump)
                .map_err(|e| bad_value(key, value, e))?;
        }
        _ => return Err(BenchError::UnknownKey(key.to_string())),
    }
    Ok(())
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str, base: PlannerConfig) -> Result<PlannerConfig, BenchError> {
    let mut config = base;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| BenchError::ConfigSyntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
        apply_override(&mut config, key, value)?;
    }
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    K,
    W,
    H,
    M,
    /// 0 plans with plain UCT, 1 with the configured redundancy weight.
    Redundancy,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::K => "K",
            SweepParam::W => "w",
            SweepParam::H => "H",
            SweepParam::M => "m",
            SweepParam::Redundancy => "redundancy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub param: SweepParam,
    /// Values as written, so CSV cells echo the input.
    pub values: Vec<String>,
}

impl FromStr for Sweep {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || BenchError::BadSweep(s.to_string());
        let (name, list) = s.split_once('=').ok_or_else(err)?;
        let param = match name.trim() {
            "K" => SweepParam::K,
            "w" => SweepParam::W,
            "H" => SweepParam::H,
            "m" => SweepParam::M,
            "redundancy" => SweepParam::Redundancy,
            _ => return Err(err()),
        };
        let values: Vec<String> = list.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(err());
        }
        let sweep = Sweep { param, values };
        let mut probe = PlannerConfig::default();
        for v in &sweep.values {
            sweep.apply(&mut probe, v)?;
        }
        Ok(sweep)
    }
}

impl Sweep {
    pub fn apply(&self, config: &mut PlannerConfig, value: &str) -> Result<(), BenchError> {
        match self.param {
            SweepParam::K => apply_override(config, "K", value),
            SweepParam::W => apply_override(config, "w", value),
            SweepParam::H => apply_override(config, "H", value),
            SweepParam::M => apply_override(config, "m", value),
            SweepParam::Redundancy => match value {
                "0" => {
                    config.ras_weight = 0.0;
                    Ok(())
                }
                "1" => Ok(()),
                _ => Err(bad_value("redundancy", value, "expected 0 or 1")),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub maze_path: PathBuf,
    pub planner: PlannerKind,
    pub seeds: usize,
    pub config: PlannerConfig,
    pub sweep: Option<Sweep>,
    /// Write measured wall-clock times; off gives byte-reproducible CSV.
    pub record_timing: bool,
}

/// One planner run, as written to the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub planner: PlannerKind,
    pub sweep_param: Option<SweepParam>,
    pub sweep_value: Option<String>,
    pub seed: usize,
    pub success: bool,
    pub wall_clock_s: f64,
    pub iterations_used: usize,
    pub expansions: usize,
    pub denoise_iterations: u64,
    pub duplicate_selection_fraction: f64,
    pub reward: f64,
}

impl RunRow {
    fn metrics(&self) -> [f64; 7] {
        [
            if self.success { 1.0 } else { 0.0 },
            self.wall_clock_s,
            self.iterations_used as f64,
            self.expansions as f64,
            self.denoise_iterations as f64,
            self.duplicate_selection_fraction,
            self.reward,
        ]
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub planner: PlannerKind,
    pub sweep_param: Option<SweepParam>,
    pub sweep_value: Option<String>,
    /// `(mean, std)` per metric column.
    pub metrics: Vec<(f64, f64)>,
}

impl AggregateRow {
    pub fn metric(&self, name: &str) -> (f64, f64) {
        let i = METRIC_COLUMNS
            .iter()
            .position(|c| *c == name)
            .unwrap_or_else(|| panic!("unknown metric {name}"));
        self.metrics[i]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchTable {
    pub runs: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl BenchTable {
    pub fn extend(&mut self, other: BenchTable) {
        self.runs.extend(other.runs);
        self.aggregates.extend(other.aggregates);
    }

    /// Per-seed rows of each group followed by that group's aggregate row.
    pub fn to_csv(&self) -> Result<String, BenchError> {
        let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
        writer.write_record(CSV_COLUMNS)?;
        for agg in &self.aggregates {
            let group = self.runs.iter().filter(|r| {
                r.planner == agg.planner
                    && r.sweep_param == agg.sweep_param
                    && r.sweep_value == agg.sweep_value
            });
            for r in group {
                writer.write_record([
                    r.planner.to_string(),
                    opt(&r.sweep_param),
                    r.sweep_value.clone().unwrap_or_default(),
                    r.seed.to_string(),
                    (r.success as u8).to_string(),
                    r.wall_clock_s.to_string(),
                    r.iterations_used.to_string(),
                    r.expansions.to_string(),
                    r.denoise_iterations.to_string(),
                    r.duplicate_selection_fraction.to_string(),
                    r.reward.to_string(),
                ])?;
            }
            let mut record = vec![
                agg.planner.to_string(),
                opt(&agg.sweep_param),
                agg.sweep_value.clone().unwrap_or_default(),
                AGGREGATE_SEED.to_string(),
            ];
            record.extend(agg.metrics.iter().map(|(m, s)| format!("{m}±{s}")));
            writer.write_record(record)?;
        }
        let body = String::from_utf8(
            writer
                .into_inner()
                .map_err(|e| csv::Error::from(e.into_error()))?,
        )
        .expect("csv output is utf-8");
        Ok(format!("{CSV_VERSION_LINE}\n{body}"))
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub fn load_problem(path: &std::path::Path) -> Result<PlanningProblem, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let maze = load_maze(&text).map_err(|source| BenchError::Maze {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(PlanningProblem::with_defaults(maze))
}

/// Runs `seeds` planner runs per sweep value, in seed order, and aggregates each group.
pub fn run_bench_on(spec: &BenchSpec, problem: &PlanningProblem) -> Result<BenchTable, BenchError> {
    if spec.seeds < 1 {
        return Err(BenchError::NoSeeds);
    }
    spec.config.validate()?;
    let sampler = SurrogateDenoiser::new(spec.config.worker_count);
    let groups: Vec<(Option<String>, PlannerConfig)> = match &spec.sweep {
        None => vec![(None, spec.config.clone())],
        Some(sweep) => sweep
            .values
            .iter()
            .map(|v| {
                let mut config = spec.config.clone();
                sweep.apply(&mut config, v)?;
                config.validate()?;
                Ok((Some(v.clone()), config))
            })
            .collect::<Result<_, BenchError>>()?,
    };
    let param = spec.sweep.as_ref().map(|s| s.param);
    let mut table = BenchTable::default();
    for (value, config) in groups {
        let mut rows = Vec::with_capacity(spec.seeds);
        for seed in 0..spec.seeds {
            let run_config = PlannerConfig {
                seed: derive_seed(config.seed, seed as u64),
                ..config.clone()
            };
            let row = match spec.planner.run(problem, &sampler, &run_config) {
                Ok(result) => RunRow {
                    planner: spec.planner,
                    sweep_param: param,
                    sweep_value: value.clone(),
                    seed,
                    success: result.success,
                    wall_clock_s: if spec.record_timing {
                        result.wall_clock.as_secs_f64()
                    } else {
                        0.0
                    },
                    iterations_used: result.iterations_used,
                    expansions: result.expansions,
                    denoise_iterations: result.denoise_iterations,
                    duplicate_selection_fraction: result.duplicate_selection_fraction,
                    reward: result.reward,
                },
                // a failing seed is recorded, never fatal to the sweep
                Err(_) => RunRow {
                    planner: spec.planner,
                    sweep_param: param,
                    sweep_value: value.clone(),
                    seed,
                    success: false,
                    wall_clock_s: 0.0,
                    iterations_used: 0,
                    expansions: 0,
                    denoise_iterations: 0,
                    duplicate_selection_fraction: 0.0,
                    reward: 0.0,
                },
            };
            rows.push(row);
        }
        let metrics = (0..METRIC_COLUMNS.len())
            .map(|i| mean_std(&rows.iter().map(|r| r.metrics()[i]).collect::<Vec<_>>()))
            .collect();
        table.aggregates.push(AggregateRow {
            planner: spec.planner,
            sweep_param: param,
            sweep_value: value,
            metrics,
        });
        table.runs.extend(rows);
    }
    Ok(table)
}

pub fn run_bench(spec: &BenchSpec) -> Result<BenchTable, BenchError> {
    let problem = load_problem(&spec.maze_path)?;
    run_bench_on(spec, &problem)
}

/// Speedup and success change of a candidate against a baseline, per group.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub planner: String,
    pub sweep_value: String,
    pub baseline_wall_clock_s: f64,
    pub candidate_wall_clock_s: f64,
    pub speedup: f64,
    /// Candidate minus baseline success rate, in percentage points.
    pub success_delta_pp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("planner,sweep_value,baseline_wall_clock_s,candidate_wall_clock_s,speedup,success_delta_pp\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.planner,
                r.sweep_value,
                r.baseline_wall_clock_s,
                r.candidate_wall_clock_s,
                r.speedup,
                r.success_delta_pp
            ));
        }
        out
    }

    pub fn to_pretty(&self) -> String {
        let mut out = format!(
            "{:<12} {:>8} {:>12} {:>12} {:>8} {:>10}\n",
            "planner", "sweep", "base_s", "cand_s", "speedup", "d_success"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>8} {:>12.4} {:>12.4} {:>8.2} {:>+10.1}\n",
                r.planner,
                r.sweep_value,
                r.baseline_wall_clock_s,
                r.candidate_wall_clock_s,
                r.speedup,
                r.success_delta_pp
            ));
        }
        out
    }
}

/// `(planner, sweep_value) -> (mean wall-clock, mean success)` from aggregate rows.
fn read_aggregates(text: &str, which: &str) -> Result<Vec<(String, String, f64, f64)>, BenchError> {
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| BenchError::Schema(format!("{which} is missing column `{name}`")))
    };
    let (planner, value, seed, wall, success) = (
        column("planner")?,
        column("sweep_value")?,
        column("seed")?,
        column("wall_clock_s")?,
        column("success")?,
    );
    for name in CSV_COLUMNS {
        column(name)?;
    }
    let mean = |cell: &str| -> Result<f64, BenchError> {
        let m = cell.split('±').next().unwrap_or(cell);
        m.parse()
            .map_err(|_| BenchError::Schema(format!("{which}: `{cell}` is not numeric")))
    };
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.get(seed) != Some(AGGREGATE_SEED) {
            continue;
        }
        out.push((
            record[planner].to_string(),
            record[value].to_string(),
            mean(&record[wall])?,
            mean(&record[success])?,
        ));
    }
    Ok(out)
}

/// Pairs aggregate rows by position; both files must come from the same sweep layout.
pub fn compare_report(baseline: &str, candidate: &str) -> Result<ComparisonReport, BenchError> {
    let base = read_aggregates(baseline, "baseline")?;
    let cand = read_aggregates(candidate, "candidate")?;
    if base.len() != cand.len() {
        return Err(BenchError::Schema(format!(
            "baseline has {} aggregate rows, candidate has {}",
            base.len(),
            cand.len()
        )));
    }
    let rows = base
        .into_iter()
        .zip(cand)
        .map(|((planner, value, bw, bs), (cplanner, cvalue, cw, cs))| {
            let speedup = if bw == cw { 1.0 } else { bw / cw };
            let planner = if planner == cplanner {
                planner
            } else {
                format!("{planner}->{cplanner}")
            };
            let sweep_value = if value == cvalue {
                value
            } else {
                format!("{value}->{cvalue}")
            };
            ComparisonRow {
                planner,
                sweep_value,
                baseline_wall_clock_s: bw,
                candidate_wall_clock_s: cw,
                speedup,
                success_delta_pp: (cs - bs) * 100.0,
            }
        })
        .collect();
    Ok(ComparisonReport { rows })
}
