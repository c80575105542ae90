//! Guided-vs-uniform benchmark sweeps.

use std::time::Duration;

use anyhow::{bail, Context, Result};
use kinoplan::pipeline::{self, PipelineConfig, SamplerMode};
use kinoplan::{Aabb, Budget, OccupancyGrid, Scenario, ScenarioGenerator, State, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{decode_history, encode_history, RunMetrics};

/// Seeds scanned per requested scenario before giving up on finding
/// connected ones.
const SEED_SCAN_FACTOR: u64 = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// First scenario seed.
    pub seed: u64,
    /// Number of scenarios.
    pub runs: usize,
    /// World extent (m); the world spans `[0, bounds]`.
    pub bounds: [f64; 3],
    pub obstacles: usize,
    /// Defaults to [`default_endpoints`].
    pub start: Option<[f64; 3]>,
    pub goal: Option<[f64; 3]>,
    pub modes: Vec<SamplerMode>,
    pub budget_ms: Option<u64>,
    pub max_samples: Option<usize>,
    /// Skip seeds whose start and goal are not joined by free cells.
    pub skip_disconnected: bool,
    pub generator: ScenarioGenerator,
    pub pipeline: PipelineConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 20,
            bounds: [40.0, 40.0, 3.0],
            obstacles: 100,
            start: None,
            goal: None,
            modes: vec![SamplerMode::Guided, SamplerMode::Uniform],
            budget_ms: Some(10_000),
            max_samples: None,
            skip_disconnected: true,
            generator: ScenarioGenerator::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

/// Start and goal at rest near opposite corners, 1 m above the floor.
pub fn default_endpoints(bounds: &Aabb) -> (State, State) {
    let e = bounds.extent();
    let inset = (0.05 * e.x.min(e.y)).max(1.0).min(0.25 * e.x.min(e.y));
    let z = bounds.min.z + 1.0f64.min(0.5 * e.z);
    (
        State::at_rest(Vec3::new(bounds.min.x + inset, bounds.min.y + inset, z)),
        State::at_rest(Vec3::new(bounds.max.x - inset, bounds.max.y - inset, z)),
    )
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            bail!("runs must be at least 1");
        }
        if self.modes.is_empty() {
            bail!("modes must not be empty");
        }
        if self.budget_ms.is_none() && self.max_samples.is_none() {
            bail!("set budget_ms or max_samples");
        }
        if self.budget_ms == Some(0) || self.max_samples == Some(0) {
            bail!("budgets must be positive");
        }
        if self.bounds.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            bail!("bounds must be positive, got {:?}", self.bounds);
        }
        self.pipeline.validate()?;
        Ok(())
    }

    pub fn budget(&self) -> Budget {
        Budget {
            max_samples: self.max_samples.unwrap_or(usize::MAX),
            max_time: self.budget_ms.map(Duration::from_millis),
            abandon_samples: None,
            abandon_time: None,
        }
    }

    fn world(&self) -> Aabb {
        Aabb::new(Vec3::zeros(), Vec3::from(self.bounds))
    }

    fn endpoints(&self) -> (State, State) {
        let (s, g) = default_endpoints(&self.world());
        (
            self.start.map_or(s, |p| State::at_rest(Vec3::from(p))),
            self.goal.map_or(g, |p| State::at_rest(Vec3::from(p))),
        )
    }

    /// Applies a `KINOPLAN_SEED`-style override.
    pub fn with_seed_override(mut self, value: Option<&str>) -> Result<Self> {
        if let Some(v) = value {
            self.seed = v.trim().parse().with_context(|| format!("seed override {v:?}"))?;
        }
        Ok(self)
    }

    /// Scenarios of the sweep with their nominal grids.
    pub fn scenarios(&self) -> Result<Vec<(Scenario, OccupancyGrid)>> {
        let (start, goal) = self.endpoints();
        let mut out = Vec::with_capacity(self.runs);
        let limit = self.seed.saturating_add(self.runs as u64 * SEED_SCAN_FACTOR);
        let mut seed = self.seed;
        while out.len() < self.runs {
            if seed >= limit {
                bail!("found only {} connected scenarios in seeds {}..{limit}", out.len(), self.seed);
            }
            let sc = self.generator.generate(seed, self.world(), self.obstacles, start, goal);
            let grid = self.pipeline.nominal_grid(&sc)?;
            if !self.skip_disconnected || grid.free_space_connected(&start.p, &goal.p) {
                out.push((sc, grid));
            }
            seed += 1;
        }
        Ok(out)
    }
}

/// One CSV row per (seed, mode) run. Times are in milliseconds; the
/// `*_ms` columns and `cost_history` depend on wall-clock time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub seed: u64,
    pub mode: SamplerMode,
    pub success: bool,
    pub time_to_first_solution_ms: Option<f64>,
    /// Front-end cost `ρT + ½∫‖u‖²`.
    pub final_cost: Option<f64>,
    /// `½∫‖u‖²` of the reported trajectory.
    pub control_cost_half_int_u2: f64,
    pub jerk_integral: f64,
    pub duration_s: f64,
    pub length_m: f64,
    pub segments: usize,
    pub samples: usize,
    pub tree_nodes: usize,
    pub used_margin: bool,
    pub planning_time_ms: f64,
    pub refine_time_ms: Option<f64>,
    pub cost_history: String,
}

impl BenchRow {
    pub fn metrics(&self) -> Result<RunMetrics> {
        Ok(RunMetrics {
            time_to_first_solution: self.time_to_first_solution_ms,
            cost_history: decode_history(&self.cost_history)?,
            control_cost: self.control_cost_half_int_u2,
            jerk_integral: self.jerk_integral,
            duration: self.duration_s,
            length: self.length_m,
            segments: self.segments,
            success: self.success,
        })
    }

    /// Copy with the wall-clock dependent columns cleared.
    pub fn without_timing(&self) -> Self {
        Self {
            time_to_first_solution_ms: None,
            planning_time_ms: 0.0,
            refine_time_ms: None,
            cost_history: String::new(),
            ..self.clone()
        }
    }
}

/// One point of a cost history, with the cost relative to the guided run's
/// final cost on the same seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub seed: u64,
    pub mode: SamplerMode,
    pub time_ms: f64,
    pub cost: f64,
    pub optimality_ratio: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct BenchOutput {
    pub rows: Vec<BenchRow>,
    pub history: Vec<HistoryRow>,
}

/// Runs every (scenario, mode) pair on a pool of `jobs` threads; rows come
/// back sorted by seed, then mode.
pub fn run_bench(config: &BenchConfig, jobs: usize) -> Result<BenchOutput> {
    config.validate()?;
    let scenarios = config.scenarios()?;
    let tasks: Vec<(usize, SamplerMode)> = (0..scenarios.len())
        .flat_map(|i| config.modes.iter().map(move |&m| (i, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let mut rows = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(i, mode)| {
                let (sc, grid) = &scenarios[i];
                let cfg = PipelineConfig {
                    mode,
                    ..config.pipeline.clone()
                };
                let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
                let run = pipeline::run_on_grid(sc, grid, &cfg, config.budget(), &mut rng)
                    .with_context(|| format!("seed {} mode {}", sc.seed, mode.as_str()))?;
                Ok(row(sc.seed, mode, &run))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    rows.sort_by_key(|r| (r.seed, r.mode));
    let history = history_rows(&rows)?;
    Ok(BenchOutput { rows, history })
}

fn row(seed: u64, mode: SamplerMode, run: &pipeline::PipelineRun) -> BenchRow {
    let m = RunMetrics::from_run(run);
    BenchRow {
        seed,
        mode,
        success: m.success,
        time_to_first_solution_ms: m.time_to_first_solution,
        final_cost: run.solved().then_some(run.plan.cost),
        control_cost_half_int_u2: m.control_cost,
        jerk_integral: m.jerk_integral,
        duration_s: m.duration,
        length_m: m.length,
        segments: m.segments,
        samples: run.plan.samples_drawn,
        tree_nodes: run.plan.nodes_expanded,
        used_margin: run.used_margin,
        planning_time_ms: run.planning_time * 1e3,
        refine_time_ms: run.refine_time.map(|t| t * 1e3),
        cost_history: encode_history(&m.cost_history),
    }
}

fn history_rows(rows: &[BenchRow]) -> Result<Vec<HistoryRow>> {
    let mut out = Vec::new();
    for r in rows {
        let baseline = rows
            .iter()
            .find(|g| g.seed == r.seed && g.mode == SamplerMode::Guided)
            .and_then(|g| g.final_cost);
        for (t, c) in decode_history(&r.cost_history)? {
            out.push(HistoryRow {
                seed: r.seed,
                mode: r.mode,
                time_ms: t,
                cost: c,
                optimality_ratio: baseline.map(|b| c / b),
            });
        }
    }
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: &std::path::Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &std::path::Path) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().map(|row| Ok(row?)).collect()
}
