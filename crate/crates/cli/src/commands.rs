//! Subcommands. Each returns an [`Outcome`] or an input error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kinoplan::pipeline::{self, PipelineConfig, SamplerMode};
use kinoplan::{Aabb, Budget, Scenario, ScenarioGenerator, State, Trajectory, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bench::{default_endpoints, run_bench, write_csv, BenchConfig};
use crate::metrics::RunMetrics;
use crate::svg::{render_svg, SvgLayers};

/// Overrides the configured seed of `plan` and `bench`.
pub const SEED_ENV: &str = "KINOPLAN_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NoSolution,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::NoSolution => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kinoplan", version, about = "Topology-guided kinodynamic planning and trajectory refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan and refine a trajectory for one scenario.
    Plan(PlanArgs),
    /// Run a guided-vs-uniform sweep and write metrics CSVs.
    Bench(BenchArgs),
    /// Generate a random scenario.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out_traj: PathBuf,
    #[arg(long)]
    pub out_metrics: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Planner seed; defaults to $KINOPLAN_SEED, then the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    pub budget_ms: u64,
    #[arg(long)]
    pub max_samples: Option<usize>,
    #[arg(long, default_value = "guided")]
    pub sampler: SamplerMode,
    #[arg(long)]
    pub no_refine: bool,
    /// JSON pipeline configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_csv: PathBuf,
    /// Cost-history CSV; defaults to `<out-csv stem>_history.csv`.
    #[arg(long)]
    pub out_history: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub obstacles: usize,
    /// World extent `X,Y,Z` in meters.
    #[arg(long, value_parser = parse_vec3)]
    pub bounds: Vec3,
    #[arg(long, value_parser = parse_vec3)]
    pub start: Option<Vec3>,
    #[arg(long, value_parser = parse_vec3)]
    pub goal: Option<Vec3>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected X,Y,Z, got {s:?}"));
    }
    let mut v = Vec3::zeros();
    for (i, p) in parts.iter().enumerate() {
        v[i] = p.trim().parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(v)
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Plan(a) => cmd_plan(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Gen(a) => cmd_gen(&a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?}"))?)),
        Err(_) => Ok(None),
    }
}

#[derive(Serialize)]
struct TrajectoryOutput<'a> {
    front_end: Option<&'a Trajectory>,
    refined: Option<&'a Trajectory>,
}

#[derive(Serialize)]
struct PlanReport {
    #[serde(flatten)]
    metrics: RunMetrics,
    seed: u64,
    mode: SamplerMode,
    final_cost: Option<f64>,
    used_margin: bool,
    samples: usize,
    tree_nodes: usize,
    planning_time_ms: f64,
    refine_time_ms: Option<f64>,
    refine_stage1_accepted: usize,
    refine_stage2_accepted: usize,
}

pub fn cmd_plan(a: &PlanArgs) -> Result<Outcome> {
    let scenario: Scenario = read_json(&a.scenario, "scenario")?;
    let mut config: PipelineConfig = match &a.config {
        Some(p) => read_json(p, "config")?,
        None => PipelineConfig::default(),
    };
    config.mode = a.sampler;
    config.refine &= !a.no_refine;
    if a.budget_ms == 0 || a.max_samples == Some(0) {
        bail!("budgets must be positive");
    }
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(scenario.seed),
    };
    let budget = Budget {
        max_samples: a.max_samples.unwrap_or(usize::MAX),
        max_time: Some(Duration::from_millis(a.budget_ms)),
        abandon_samples: None,
        abandon_time: None,
    };
    let grid = config.nominal_grid(&scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = pipeline::run_on_grid(&scenario, &grid, &config, budget, &mut rng)?;

    let refined = run.refined.as_ref().map(|r| &r.trajectory);
    write_json(
        &a.out_traj,
        &TrajectoryOutput {
            front_end: run.front_end(),
            refined,
        },
    )?;
    let metrics = RunMetrics::from_run(&run);
    let report = PlanReport {
        metrics: metrics.clone(),
        seed,
        mode: config.mode,
        final_cost: run.solved().then_some(run.plan.cost),
        used_margin: run.used_margin,
        samples: run.plan.samples_drawn,
        tree_nodes: run.plan.nodes_expanded,
        planning_time_ms: run.planning_time * 1e3,
        refine_time_ms: run.refine_time.map(|t| t * 1e3),
        refine_stage1_accepted: run.refined.as_ref().map_or(0, |r| r.stage1_feasible),
        refine_stage2_accepted: run.refined.as_ref().map_or(0, |r| r.stage2_feasible),
    };
    write_json(&a.out_metrics, &report)?;
    if let Some(path) = &a.svg {
        let layers = SvgLayers {
            graph: run.graph.as_ref(),
            tree: Some(&run.plan.tree),
            front_end: run.front_end(),
            refined,
        };
        fs::write(path, render_svg(&scenario, &layers)).with_context(|| format!("writing {}", path.display()))?;
    }

    if !run.solved() {
        println!("no solution after {} samples", run.plan.samples_drawn);
        return Ok(Outcome::NoSolution);
    }
    println!(
        "solved: first solution {:.1} ms, cost {:.3}, {} segments, duration {:.3} s, jerk integral {:.3}",
        metrics.time_to_first_solution.unwrap_or(f64::NAN),
        run.plan.cost,
        metrics.segments,
        metrics.duration,
        metrics.jerk_integral
    );
    Ok(Outcome::Success)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<Outcome> {
    let config: BenchConfig = read_json(&a.config, "bench config")?;
    let config = config.with_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
    let out = run_bench(&config, a.jobs)?;
    write_csv(&a.out_csv, &out.rows)?;
    let history = a.out_history.clone().unwrap_or_else(|| {
        let stem = a.out_csv.file_stem().map_or("bench".into(), |s| s.to_string_lossy().into_owned());
        a.out_csv.with_file_name(format!("{stem}_history.csv"))
    });
    write_csv(&history, &out.history)?;
    for mode in &config.modes {
        let rows: Vec<_> = out.rows.iter().filter(|r| r.mode == *mode).collect();
        let mut firsts: Vec<f64> = rows.iter().filter_map(|r| r.time_to_first_solution_ms).collect();
        firsts.sort_by(f64::total_cmp);
        let solved = rows.iter().filter(|r| r.success).count();
        let median = firsts.get(firsts.len() / 2).map_or("-".to_string(), |m| format!("{m:.1} ms"));
        println!("{:>8}: solved {solved}/{}, median first solution {median}", mode.as_str(), rows.len());
    }
    Ok(Outcome::Success)
}

pub fn cmd_gen(a: &GenArgs) -> Result<Outcome> {
    if a.bounds.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        bail!("bounds must be positive, got {:?}", a.bounds.as_slice());
    }
    let bounds = Aabb::new(Vec3::zeros(), a.bounds);
    let (s, g) = default_endpoints(&bounds);
    let start = a.start.map_or(s, State::at_rest);
    let goal = a.goal.map_or(g, State::at_rest);
    for (name, st) in [("start", &start), ("goal", &goal)] {
        if !bounds.contains(&st.p) {
            bail!("{name} {:?} lies outside the bounds", st.p.as_slice());
        }
    }
    let sc = ScenarioGenerator::default().generate(a.seed, bounds, a.obstacles, start, goal);
    write_json(&a.out, &sc)?;
    println!("wrote {} obstacles to {}", sc.obstacles.len(), a.out.display());
    Ok(Outcome::Success)
}
