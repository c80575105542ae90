//! Top-down SVG views of a scenario and planning results.

use std::fmt::Write;

use kinoplan::{Obstacle, PolySegment, Scenario, TopoGraph, Trajectory, Tree, Vec3};

const WIDTH_PX: f64 = 800.0;
const PAD_PX: f64 = 10.0;
const OBSTACLE: &str = "#808080";
const GRAPH: &str = "#ff8c00";
const TREE: &str = "#2e8b57";
const FRONT_END: &str = "#ff8c00";
const REFINED: &str = "#d62728";

/// Optional overlays drawn over the obstacles, bottom to top.
#[derive(Clone, Copy, Debug, Default)]
pub struct SvgLayers<'a> {
    pub graph: Option<&'a TopoGraph>,
    pub tree: Option<&'a Tree>,
    pub front_end: Option<&'a Trajectory>,
    pub refined: Option<&'a Trajectory>,
}

struct View {
    min: Vec3,
    max_y: f64,
    scale: f64,
}

impl View {
    fn x(&self, x: f64) -> f64 {
        PAD_PX + (x - self.min.x) * self.scale
    }

    fn y(&self, y: f64) -> f64 {
        PAD_PX + (self.max_y - y) * self.scale
    }

    fn points(&self, pts: impl Iterator<Item = Vec3>) -> String {
        pts.map(|p| format!("{:.2},{:.2}", self.x(p.x), self.y(p.y)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn segment_points(seg: &PolySegment, n: usize) -> impl Iterator<Item = Vec3> + '_ {
    let t = seg.duration();
    (0..=n).map(move |k| seg.position(t * k as f64 / n as f64))
}

fn trajectory_points(traj: &Trajectory) -> impl Iterator<Item = Vec3> + '_ {
    traj.segments()
        .iter()
        .enumerate()
        .flat_map(|(i, s)| segment_points(s, 20).skip(usize::from(i > 0)))
}

/// Orthographic x-y projection. Output depends only on the inputs.
pub fn render_svg(scenario: &Scenario, layers: &SvgLayers) -> String {
    let b = &scenario.bounds;
    let e = b.extent();
    let scale = WIDTH_PX / e.x.max(e.y);
    let view = View {
        min: b.min,
        max_y: b.max.y,
        scale,
    };
    let (w, h) = (e.x * scale + 2.0 * PAD_PX, e.y * scale + 2.0 * PAD_PX);
    let mut s = String::new();
    // Writing to a String cannot fail.
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect class="bounds" x="{PAD_PX}" y="{PAD_PX}" width="{:.2}" height="{:.2}" fill="white" stroke="black"/>"#,
        e.x * scale,
        e.y * scale
    );
    for obs in &scenario.obstacles {
        match *obs {
            Obstacle::Box { min, max } => {
                let _ = writeln!(
                    s,
                    r#"<rect class="obstacle" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{OBSTACLE}"/>"#,
                    view.x(min.x),
                    view.y(max.y),
                    (max.x - min.x) * scale,
                    (max.y - min.y) * scale
                );
            }
            Obstacle::Cylinder { center, radius, .. } => {
                let _ = writeln!(
                    s,
                    r#"<circle class="obstacle" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{OBSTACLE}"/>"#,
                    view.x(center.x),
                    view.y(center.y),
                    radius * scale
                );
            }
        }
    }
    if let Some(g) = layers.graph {
        for i in 0..g.edges().len() {
            let (a, b) = g.edge_segment(i);
            let _ = writeln!(
                s,
                r#"<line class="graph" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{GRAPH}" stroke-dasharray="4 3"/>"#,
                view.x(a.x),
                view.y(a.y),
                view.x(b.x),
                view.y(b.y)
            );
        }
    }
    if let Some(t) = layers.tree {
        for node in t.nodes() {
            if let Some(edge) = &node.edge {
                let _ = writeln!(
                    s,
                    r#"<polyline class="tree" points="{}" fill="none" stroke="{TREE}" stroke-width="0.5"/>"#,
                    view.points(segment_points(edge, 8))
                );
            }
        }
    }
    for (traj, class, color) in [(layers.front_end, "front-end", FRONT_END), (layers.refined, "refined", REFINED)] {
        if let Some(traj) = traj {
            let _ = writeln!(
                s,
                r#"<polyline class="{class}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                view.points(trajectory_points(traj))
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
