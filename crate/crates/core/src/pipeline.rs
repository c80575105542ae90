//! One planning run on a scenario: grids, guide graph, front-end, refinement.
//!
//! The front-end first plans on a grid inflated by an extra clearance margin,
//! so that the refiner has room to move the trajectory without touching the
//! nominal obstacles. If that finds nothing within half the budget (or the
//! endpoints are not free under the margin), it plans again on the nominal
//! grid with what is left. Refinement always checks against the nominal grid.

use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::bvp::PlannerParams;
use crate::error::{Error, Result};
use crate::grid::{OccupancyGrid, Scenario, DEFAULT_INFLATION, DEFAULT_RESOLUTION};
use crate::refine::{self, RefineOutcome, ScheduleParams};
use crate::rrt::{Budget, PlanResult, Planner};
use crate::state::Trajectory;
use crate::topo::{GuidedSampler, SamplerParams, StateSampler, TopoGraph, UniformSampler, DEFAULT_MAX_RAY};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Guided,
    Uniform,
}

impl SamplerMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplerMode::Guided => "guided",
            SamplerMode::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "guided" => Ok(SamplerMode::Guided),
            "uniform" => Ok(SamplerMode::Uniform),
            other => Err(Error::Parameter(format!("unknown sampler mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub resolution: f64,
    pub inflation: f64,
    /// Extra inflation for the first front-end attempt (m); zero disables it.
    pub clearance_margin: f64,
    pub max_ray: f64,
    pub mode: SamplerMode,
    pub refine: bool,
    pub planner: PlannerParams,
    /// `v_max` here is ignored; the planner's bound is used.
    pub sampler: SamplerParams,
    pub schedule: ScheduleParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            inflation: DEFAULT_INFLATION,
            clearance_margin: 0.1,
            max_ray: DEFAULT_MAX_RAY,
            mode: SamplerMode::Guided,
            refine: true,
            planner: PlannerParams::default(),
            sampler: SamplerParams::default(),
            schedule: ScheduleParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clearance_margin >= 0.0) {
            return Err(Error::Parameter(format!("clearance_margin {}", self.clearance_margin)));
        }
        self.planner.validate()?;
        self.sampler_params().validate()?;
        self.schedule.validate()
    }

    fn sampler_params(&self) -> SamplerParams {
        SamplerParams {
            v_max: self.planner.v_max,
            ..self.sampler.clone()
        }
    }

    pub fn nominal_grid(&self, scenario: &Scenario) -> Result<OccupancyGrid> {
        OccupancyGrid::build(scenario, self.resolution, self.inflation)
    }
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub graph: Option<TopoGraph>,
    pub plan: PlanResult,
    /// True when the reported plan came from the margin grid.
    pub used_margin: bool,
    /// Seconds from the start of the run, including graph construction and
    /// any abandoned margin attempt.
    pub time_to_first_solution: Option<f64>,
    /// `(seconds, best cost)` on the same clock as `time_to_first_solution`.
    pub history: Vec<(f64, f64)>,
    pub planning_time: f64,
    pub refined: Option<RefineOutcome>,
    pub refine_time: Option<f64>,
}

impl PipelineRun {
    pub fn solved(&self) -> bool {
        self.plan.solved()
    }

    pub fn front_end(&self) -> Option<&Trajectory> {
        self.plan.trajectory.as_ref()
    }

    /// Refined trajectory if refinement ran, otherwise the front-end one.
    pub fn final_trajectory(&self) -> Option<&Trajectory> {
        self.refined.as_ref().map(|r| &r.trajectory).or(self.front_end())
    }
}

/// Runs the whole pipeline with a freshly built nominal grid.
pub fn run(scenario: &Scenario, config: &PipelineConfig, budget: Budget, rng: &mut dyn RngCore) -> Result<PipelineRun> {
    let grid = config.nominal_grid(scenario)?;
    run_on_grid(scenario, &grid, config, budget, rng)
}

/// Runs the pipeline on a prebuilt nominal grid of `scenario`.
pub fn run_on_grid(
    scenario: &Scenario,
    grid: &OccupancyGrid,
    config: &PipelineConfig,
    budget: Budget,
    rng: &mut dyn RngCore,
) -> Result<PipelineRun> {
    config.validate()?;
    let started = Instant::now();
    let (start, goal) = (scenario.start, scenario.goal);

    let margin_grid = if config.clearance_margin > 0.0 {
        let g = OccupancyGrid::build(scenario, config.resolution, config.inflation + config.clearance_margin)?;
        (g.is_free(&start.p) && g.is_free(&goal.p)).then_some(g)
    } else {
        None
    };

    // Returns the graph, the plan and the run-clock time at which sampling began.
    let attempt = |plan_grid: &OccupancyGrid, budget: Budget, rng: &mut dyn RngCore| -> Result<(Option<TopoGraph>, PlanResult, f64)> {
        let planner = Planner::new(plan_grid, config.planner.clone())?;
        let (graph, sampler): (Option<TopoGraph>, Box<dyn StateSampler>) = match config.mode {
            SamplerMode::Guided => {
                let graph = TopoGraph::build_with_ray(plan_grid, &start, &goal, config.planner.rho, config.max_ray)?;
                let sampler = GuidedSampler {
                    graph: graph.clone(),
                    params: config.sampler_params(),
                };
                (Some(graph), Box::new(sampler))
            }
            SamplerMode::Uniform => (None, Box::new(UniformSampler { v_max: config.planner.v_max })),
        };
        let begin = started.elapsed().as_secs_f64();
        let plan = planner.plan(&start, &goal, sampler.as_ref(), budget, rng)?;
        Ok((graph, plan, begin))
    };

    let mut used_margin = false;
    let mut remaining = budget;
    let mut outcome = None;
    if let Some(mg) = &margin_grid {
        let first = Budget {
            abandon_samples: Some(budget.max_samples / 2),
            abandon_time: budget.max_time.map(|t| t / 2),
            ..budget
        };
        let (graph, plan, begin) = attempt(mg, first, rng)?;
        if plan.solved() {
            used_margin = true;
            outcome = Some((graph, plan, begin));
        } else {
            remaining.max_samples = budget.max_samples.saturating_sub(plan.samples_drawn);
            remaining.max_time = budget.max_time.map(|t| t.saturating_sub(started.elapsed()));
        }
    }
    let (graph, plan, begin) = match outcome {
        Some(o) => o,
        None => attempt(grid, remaining, rng)?,
    };
    let planning_time = started.elapsed().as_secs_f64();
    let time_to_first_solution = plan.first_solution_time.map(|t| t + begin);
    let history = plan.history.iter().map(|&(t, c)| (t + begin, c)).collect();

    let (refined, refine_time) = match (&plan.trajectory, config.refine) {
        (Some(traj), true) => {
            let t0 = Instant::now();
            let out = refine::refine(traj, grid, &config.planner, &config.schedule)?;
            (Some(out), Some(t0.elapsed().as_secs_f64()))
        }
        _ => (None, None),
    };
    Ok(PipelineRun {
        graph,
        plan,
        used_margin,
        time_to_first_solution,
        history,
        planning_time,
        refined,
        refine_time,
    })
}
