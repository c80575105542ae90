//! Kinodynamic trajectory planning for a 3-D double integrator.
//!
//! The pipeline has two stages. A sampling-based front-end ([`rrt`]) grows an
//! anytime kinodynamic RRT* tree whose edges are closed-form optimal
//! double-integrator connections ([`bvp`]); samples are drawn around a cheap
//! topology graph built by ray tracing across the obstacles that the
//! obstacle-free connection passes through ([`topo`]). A back-end
//! ([`refine`]) re-optimizes the resulting piecewise-cubic trajectory as a
//! sequence of unconstrained quadratic programs over quintic segments, trading
//! jerk, proximity to the front-end path, and acceleration continuity, and
//! keeps the last iterate that passes the feasibility check.
//!
//! All collision queries go through the voxel map in [`grid`].

// `!(x > 0.0)` is used on purpose so that NaN fails validation; axis loops
// index several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bvp;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod pipeline;
pub mod refine;
pub mod roots;
pub mod rrt;
pub mod state;
pub mod topo;

pub use bvp::{PlannerParams, TransitionResult};
pub use error::{Error, Result};
pub use grid::{Aabb, Obstacle, OccupancyGrid, Scenario, ScenarioGenerator};
pub use metrics::TrajectoryMetrics;
pub use pipeline::{PipelineConfig, PipelineRun, SamplerMode};
pub use refine::{RefineOutcome, RefineProblem, ScheduleParams, Weights};
pub use rrt::{Budget, PlanResult, Planner, Tree};
pub use state::{PolySegment, State, Trajectory, Vec3};
pub use topo::{GuidedSampler, SamplerParams, StateSampler, TopoGraph, UniformSampler};
