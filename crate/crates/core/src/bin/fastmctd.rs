use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fastmctd::bench::{
    apply_override, compare_report, load_problem, parse_config, run_bench_on, BenchSpec,
    BenchTable, PlannerKind, Sweep,
};
use fastmctd::core_model::{generate_maze, DivisionStyle};
use fastmctd::planner::{fast_mctd_search, mctd_search, PlannerConfig};
use fastmctd::sampler::SurrogateDenoiser;

#[derive(Parser)]
#[command(
    name = "fastmctd",
    version,
    about = "Tree-diffusion planning benchmarks on grid mazes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    maze: PathBuf,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// `key = value` config file applied before `--set`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, repeatable: `--set K=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write 0 for wall-clock so output is byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one planner over several seeds.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fast")]
        planner: String,
    },
    /// Run several planners over the same seeds.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "mctd,pmctd,smctd,fast")]
        planners: Vec<String>,
    },
    /// Sweep one parameter: `--sweep K=1,8,64,200`.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fast")]
        planner: String,
        #[arg(long)]
        sweep: String,
    },
    /// Speedup and success deltas of a candidate CSV against a baseline CSV.
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
        /// Print CSV instead of a table.
        #[arg(long)]
        csv: bool,
    },
    /// Print the search tree of one run.
    DumpTree {
        #[arg(long)]
        maze: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Sequential dense search instead of Fast-MCTD.
        #[arg(long)]
        sequential: bool,
    },
    /// Write a recursive-division maze.
    GenMaze {
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        min_chamber: usize,
        #[arg(long, default_value_t = 1)]
        door_width: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn build_config(config: Option<&Path>, overrides: &[String]) -> Result<PlannerConfig> {
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            parse_config(&text, PlannerConfig::default())?
        }
        None => PlannerConfig::default(),
    };
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!("override `{o}` is not KEY=VALUE");
        };
        apply_override(&mut cfg, k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_table(common: &Common, planners: &[PlannerKind], sweep: Option<Sweep>) -> Result<()> {
    let mut config = build_config(common.config.as_deref(), &common.overrides)?;
    if let Some(w) = common.workers {
        config.worker_count = w;
    }
    config.validate()?;
    let problem = load_problem(&common.maze)?;
    let mut table = BenchTable::default();
    for &planner in planners {
        let spec = BenchSpec {
            maze_path: common.maze.clone(),
            planner,
            seeds: common.seeds,
            config: config.clone(),
            sweep: sweep.clone(),
            record_timing: !common.no_timing,
        };
        table.extend(run_bench_on(&spec, &problem)?);
    }
    write_out(common.out.as_deref(), &table.to_csv()?)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan { common, planner } => run_table(&common, &[planner.parse()?], None),
        Command::Bench { common, planners } => {
            let kinds = planners
                .iter()
                .map(|p| p.parse())
                .collect::<Result<Vec<PlannerKind>, _>>()?;
            run_table(&common, &kinds, None)
        }
        Command::Ablate {
            common,
            planner,
            sweep,
        } => run_table(&common, &[planner.parse()?], Some(sweep.parse()?)),
        Command::Compare {
            baseline,
            candidate,
            csv,
        } => {
            let read = |p: &Path| {
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
            };
            let report = compare_report(&read(&baseline)?, &read(&candidate)?)?;
            print!(
                "{}",
                if csv {
                    report.to_csv()
                } else {
                    report.to_pretty()
                }
            );
            Ok(())
        }
        Command::DumpTree {
            maze,
            config,
            overrides,
            sequential,
        } => {
            let cfg = build_config(config.as_deref(), &overrides)?;
            let problem = load_problem(&maze)?;
            let sampler = SurrogateDenoiser::new(cfg.worker_count);
            let (result, tree) = if sequential {
                mctd_search(&problem, &sampler, &cfg.sequential())?
            } else {
                fast_mctd_search(&problem, &sampler, &cfg)?
            };
            print!("{}", tree.dump());
            eprintln!(
                "success={} rollouts={} expansions={}",
                result.success, result.iterations_used, result.expansions
            );
            Ok(())
        }
        Command::GenMaze {
            size,
            seed,
            min_chamber,
            door_width,
            out,
        } => {
            if size < 5 || size.is_multiple_of(2) {
                bail!("size must be odd and >= 5");
            }
            let maze = generate_maze(
                size,
                DivisionStyle {
                    min_chamber,
                    door_width,
                },
                seed,
            );
            write_out(out.as_deref(), &maze.to_text())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
