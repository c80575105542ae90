//! Command-line front end: scenario generation, single planning runs,
//! guided-vs-uniform benchmark sweeps, metrics CSV and SVG rendering.

pub mod bench;
pub mod commands;
pub mod metrics;
pub mod svg;

pub use bench::{BenchConfig, BenchOutput, BenchRow, HistoryRow};
pub use commands::{Outcome, SEED_ENV};
pub use metrics::RunMetrics;
pub use svg::{render_svg, SvgLayers};
