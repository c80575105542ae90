//! Per-run metrics as reported by `plan` and `bench`.

use anyhow::{bail, Context, Result};
use kinoplan::{PipelineRun, TrajectoryMetrics};
use serde::{Deserialize, Serialize};

/// Metrics of one planning run. Times are in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub time_to_first_solution: Option<f64>,
    /// `(ms, cost)` at every improvement of the front-end incumbent.
    pub cost_history: Vec<(f64, f64)>,
    /// `Σ ½∫‖u‖² dt` (m²/s³).
    pub control_cost: f64,
    /// `Σ ∫‖jerk‖² dt` (m²/s⁵).
    pub jerk_integral: f64,
    /// s
    pub duration: f64,
    /// m
    pub length: f64,
    pub segments: usize,
    pub success: bool,
}

impl RunMetrics {
    /// Metrics of the final (refined if available) trajectory of `run`.
    pub fn from_run(run: &PipelineRun) -> Self {
        let m = run.final_trajectory().map(TrajectoryMetrics::of);
        Self {
            time_to_first_solution: run.time_to_first_solution.map(|t| t * 1e3),
            cost_history: run.history.iter().map(|&(t, c)| (t * 1e3, c)).collect(),
            control_cost: m.map_or(0.0, |m| m.control_cost),
            jerk_integral: m.map_or(0.0, |m| m.jerk_integral),
            duration: m.map_or(0.0, |m| m.duration),
            length: m.map_or(0.0, |m| m.length),
            segments: m.map_or(0, |m| m.segments),
            success: run.solved(),
        }
    }
}

/// `ms:cost` pairs joined by `;`, with round-trip float formatting.
pub fn encode_history(history: &[(f64, f64)]) -> String {
    history
        .iter()
        .map(|(t, c)| format!("{t}:{c}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn decode_history(s: &str) -> Result<Vec<(f64, f64)>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|pair| {
            let Some((t, c)) = pair.split_once(':') else {
                bail!("history entry {pair:?} is not time:cost");
            };
            let t = t.parse().with_context(|| format!("history time {t:?}"))?;
            let c = c.parse().with_context(|| format!("history cost {c:?}"))?;
            Ok((t, c))
        })
        .collect()
}
