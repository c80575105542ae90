//! Topology guided graph and state samplers.
//!
//! The graph is built from the obstacle-free optimal connection between start
//! and goal. Every stretch of that connection that runs through occupied space
//! yields a traversal line; from its midpoint, horizontal rays perpendicular to
//! the line look for free space on either side. The hits become graph vertices
//! and consecutive layers (start, one layer per traversal line, goal) are fully
//! connected. Edges may cross obstacles; they only steer where states are
//! sampled.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bvp;
use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;
use crate::state::{State, Vec3};

pub const DEFAULT_MAX_RAY: f64 = 10.0;
const MAX_GUIDED_TRIES: usize = 32;
const MAX_UNIFORM_TRIES: usize = 10_000;

/// Where the obstacle-free connection enters and leaves one occupied stretch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraversalLine {
    pub p_in: Vec3,
    pub p_out: Vec3,
}

impl TraversalLine {
    pub fn midpoint(&self) -> Vec3 {
        0.5 * (self.p_in + self.p_out)
    }
}

/// Layered guide graph from start to goal.
#[derive(Clone, Debug, PartialEq)]
pub struct TopoGraph {
    vertices: Vec<Vec3>,
    layers: Vec<Vec<usize>>,
    edges: Vec<[usize; 2]>,
    lines: Vec<TraversalLine>,
    /// Prefix sums of edge lengths, for length-weighted edge selection.
    cumulative: Vec<f64>,
}

/// JSON layout of a graph dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub vertices: Vec<Vec3>,
    pub edges: Vec<[usize; 2]>,
}

impl TopoGraph {
    /// Builds the graph with the default ray length.
    pub fn build(grid: &OccupancyGrid, x_init: &State, x_goal: &State, rho: f64) -> Result<Self> {
        Self::build_with_ray(grid, x_init, x_goal, rho, DEFAULT_MAX_RAY)
    }

    pub fn build_with_ray(
        grid: &OccupancyGrid,
        x_init: &State,
        x_goal: &State,
        rho: f64,
        max_ray: f64,
    ) -> Result<Self> {
        if !(max_ray > 0.0) {
            return Err(Error::Parameter(format!("max ray length {max_ray}")));
        }
        let direct = bvp::connect(x_init, x_goal, rho)?;
        let lines = if direct.tau == 0.0 {
            Vec::new()
        } else {
            traversal_lines(grid, &direct.segment)
        };

        let mut vertices = vec![x_init.p];
        let mut layers = vec![vec![0]];
        let mut kept = Vec::new();
        let fallback = horizontal_normal(&(x_goal.p - x_init.p)).unwrap_or_else(Vec3::x);
        for line in &lines {
            let dir = horizontal_normal(&(line.p_out - line.p_in)).unwrap_or(fallback);
            let mid = line.midpoint();
            let mut hits: Vec<Vec3> = [dir, -dir]
                .iter()
                .filter_map(|d| grid.raycast_to_free(&mid, d, max_ray))
                .collect();
            hits.dedup();
            if hits.is_empty() {
                continue;
            }
            let layer = hits
                .into_iter()
                .map(|p| {
                    vertices.push(p);
                    vertices.len() - 1
                })
                .collect();
            layers.push(layer);
            kept.push(*line);
        }
        vertices.push(x_goal.p);
        layers.push(vec![vertices.len() - 1]);

        let mut edges = Vec::new();
        for w in layers.windows(2) {
            for &a in &w[0] {
                for &b in &w[1] {
                    edges.push([a, b]);
                }
            }
        }
        let mut cumulative = Vec::with_capacity(edges.len());
        let mut total = 0.0;
        for e in &edges {
            total += (vertices[e[1]] - vertices[e[0]]).norm();
            cumulative.push(total);
        }
        Ok(Self {
            vertices,
            layers,
            edges,
            lines: kept,
            cumulative,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn layers(&self) -> &[Vec<usize>] {
        &self.layers
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Traversal lines that produced at least one vertex.
    pub fn traversal_lines(&self) -> &[TraversalLine] {
        &self.lines
    }

    pub fn edge_segment(&self, i: usize) -> (Vec3, Vec3) {
        let [a, b] = self.edges[i];
        (self.vertices[a], self.vertices[b])
    }

    pub fn dump(&self) -> GraphDump {
        GraphDump {
            vertices: self.vertices.clone(),
            edges: self.edges.clone(),
        }
    }

    fn pick_edge(&self, rng: &mut dyn RngCore) -> usize {
        let total = self.cumulative.last().copied().unwrap_or(0.0);
        if total <= 0.0 {
            return rng.random_range(0..self.edges.len());
        }
        let u = rng.random_range(0.0..total);
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.edges.len() - 1)
    }
}

/// Free-function form of [`TopoGraph::build`].
pub fn build_topo_graph(grid: &OccupancyGrid, x_init: &State, x_goal: &State, rho: f64) -> Result<TopoGraph> {
    TopoGraph::build(grid, x_init, x_goal, rho)
}

/// Unit vector perpendicular to `v` and to the vertical axis.
fn horizontal_normal(v: &Vec3) -> Option<Vec3> {
    let n = v.cross(&Vec3::z());
    let len = n.norm();
    (len > 1e-9 * (1.0 + v.norm())).then(|| n / len)
}

/// Occupied stretches of `seg`, sampled at half-cell spatial stride.
pub fn traversal_lines(grid: &OccupancyGrid, seg: &crate::state::PolySegment) -> Vec<TraversalLine> {
    let vel = seg.max_abs_axis(1);
    let v_bound = (vel[0] * vel[0] + vel[1] * vel[1] + vel[2] * vel[2]).sqrt();
    let tau = seg.duration();
    let stride = 0.5 * grid.resolution();
    let n = ((v_bound * tau / stride).ceil() as usize).max(1);
    let mut lines = Vec::new();
    let mut entry: Option<Vec3> = None;
    let mut last_occupied = Vec3::zeros();
    for k in 0..=n {
        let p = seg.position(tau * k as f64 / n as f64);
        let occupied = !grid.is_free(&p);
        match (entry, occupied) {
            (None, true) => {
                entry = Some(p);
                last_occupied = p;
            }
            (Some(_), true) => last_occupied = p,
            (Some(p_in), false) => {
                lines.push(TraversalLine {
                    p_in,
                    p_out: last_occupied,
                });
                entry = None;
            }
            (None, false) => {}
        }
    }
    // A stretch still open at the end never exits and is dropped.
    lines
}

/// Parameters of guided sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerParams {
    /// Lateral position spread around an edge (m).
    pub sigma_pos: f64,
    /// Angular spread of the velocity direction around the edge direction (rad).
    pub sigma_dir: f64,
    /// Probability of drawing a uniform free-space sample instead.
    pub uniform_mix: f64,
    pub v_max: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            sigma_pos: 1.0,
            sigma_dir: 30f64.to_radians(),
            uniform_mix: 0.2,
            v_max: 5.0,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_pos > 0.0) {
            return Err(Error::Parameter(format!("sigma_pos {}", self.sigma_pos)));
        }
        if !(self.sigma_dir >= 0.0) {
            return Err(Error::Parameter(format!("sigma_dir {}", self.sigma_dir)));
        }
        if !(0.0..=1.0).contains(&self.uniform_mix) {
            return Err(Error::Parameter(format!("uniform_mix {}", self.uniform_mix)));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::Parameter(format!("v_max {}", self.v_max)));
        }
        Ok(())
    }
}

/// Source of random states for the planner.
pub trait StateSampler {
    /// A state with free position and speed in `(0, v_max]`, or `None` when
    /// no free position could be found.
    fn sample(&self, grid: &OccupancyGrid, rng: &mut dyn RngCore) -> Option<State>;
}

/// Uniform positions over free space, uniform velocity directions.
#[derive(Clone, Debug)]
pub struct UniformSampler {
    pub v_max: f64,
}

impl StateSampler for UniformSampler {
    fn sample(&self, grid: &OccupancyGrid, rng: &mut dyn RngCore) -> Option<State> {
        sample_uniform(grid, rng, self.v_max)
    }
}

/// Gaussian sampling around topology graph edges, mixed with uniform samples.
#[derive(Clone, Debug)]
pub struct GuidedSampler {
    pub graph: TopoGraph,
    pub params: SamplerParams,
}

impl StateSampler for GuidedSampler {
    fn sample(&self, grid: &OccupancyGrid, rng: &mut dyn RngCore) -> Option<State> {
        sample_guided(&self.graph, grid, rng, &self.params)
    }
}

fn random_speed(rng: &mut dyn RngCore, v_max: f64) -> f64 {
    // (0, v_max]
    v_max * (1.0 - rng.random::<f64>())
}

fn random_unit(rng: &mut dyn RngCore) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Uniform free-space state.
pub fn sample_uniform(grid: &OccupancyGrid, rng: &mut dyn RngCore, v_max: f64) -> Option<State> {
    let b = *grid.bounds();
    for _ in 0..MAX_UNIFORM_TRIES {
        let p = Vec3::from_fn(|a, _| rng.random_range(b.min[a]..b.max[a]));
        if grid.is_free(&p) {
            let v = random_unit(rng) * random_speed(rng, v_max);
            return Some(State::new(p, v));
        }
    }
    None
}

/// Orthonormal pair completing `e` to a right-handed frame; the first vector
/// is horizontal whenever `e` is not vertical.
fn perpendicular_frame(e: &Vec3) -> (Vec3, Vec3) {
    let n1 = horizontal_normal(e).unwrap_or_else(Vec3::x);
    let n2 = e.cross(&n1);
    (n1, n2)
}

/// One guided sample from `graph`.
pub fn sample_guided(
    graph: &TopoGraph,
    grid: &OccupancyGrid,
    rng: &mut dyn RngCore,
    params: &SamplerParams,
) -> Option<State> {
    if graph.edges.is_empty() || rng.random::<f64>() < params.uniform_mix {
        return sample_uniform(grid, rng, params.v_max);
    }
    let (a, b) = graph.edge_segment(graph.pick_edge(rng));
    let along = b - a;
    let len = along.norm();
    let e = if len > 1e-12 { Some(along / len) } else { None };
    let (n1, n2) = match e {
        Some(e) => perpendicular_frame(&e),
        None => (Vec3::x(), Vec3::y()),
    };
    for _ in 0..MAX_GUIDED_TRIES {
        let base = a + along * rng.random::<f64>();
        let o1: f64 = StandardNormal.sample(rng);
        let o2: f64 = StandardNormal.sample(rng);
        let p = base + (o1 * n1 + o2 * n2) * params.sigma_pos;
        if !grid.is_free(&p) {
            continue;
        }
        let dir = match e {
            Some(e) => {
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                let (alpha, beta) = (z1 * params.sigma_dir, z2 * params.sigma_dir);
                beta.cos() * (alpha.cos() * e + alpha.sin() * n1) + beta.sin() * n2
            }
            None => random_unit(rng),
        };
        return Some(State::new(p, dir * random_speed(rng, params.v_max)));
    }
    sample_uniform(grid, rng, params.v_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Aabb, Obstacle, Scenario};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world(obstacles: Vec<Obstacle>) -> (OccupancyGrid, State, State) {
        let start = State::at_rest(Vec3::new(-4.0, 0.0, 1.0));
        let goal = State::at_rest(Vec3::new(4.0, 0.0, 1.0));
        let sc = Scenario {
            bounds: Aabb::new(Vec3::new(-5.0, -5.0, 0.0), Vec3::new(5.0, 5.0, 2.0)),
            obstacles,
            start,
            goal,
            seed: 0,
        };
        (OccupancyGrid::build(&sc, 0.1, 0.0).unwrap(), start, goal)
    }

    fn wall() -> Obstacle {
        Obstacle::Box {
            min: Vec3::new(-0.5, -2.0, 0.0),
            max: Vec3::new(0.5, 2.0, 2.0),
        }
    }

    #[test]
    fn free_world_gives_single_edge() {
        let (g, s, t) = world(vec![]);
        let graph = TopoGraph::build(&g, &s, &t, 1.0).unwrap();
        assert!(graph.traversal_lines().is_empty());
        assert_eq!(graph.edges(), &[[0, 1]]);
        assert_eq!(graph.vertices(), &[s.p, t.p]);
    }

    #[test]
    fn single_wall_gives_one_line_and_flanking_vertices() {
        let (g, s, t) = world(vec![wall()]);
        // oracle march: count free->occupied transitions along the straight path
        let seg = bvp::connect(&s, &t, 1.0).unwrap().segment;
        let mut transitions = 0;
        let mut prev = true;
        for k in 0..=10_000 {
            let free = g.is_free(&seg.position(seg.duration() * k as f64 / 10_000.0));
            if prev && !free {
                transitions += 1;
            }
            prev = free;
        }
        assert_eq!(transitions, 1);

        let graph = TopoGraph::build(&g, &s, &t, 1.0).unwrap();
        assert_eq!(graph.traversal_lines().len(), 1);
        assert_eq!(graph.layers().len(), 3);
        assert_eq!(graph.layers()[1].len(), 2);
        assert_eq!(graph.edges().len(), 4);
        for &vi in &graph.layers()[1] {
            let v = graph.vertices()[vi];
            assert!(g.is_free(&v));
            assert!(v.y.abs() >= 2.0 && v.y.abs() <= 2.2, "{v:?}");
            assert!((v.z - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn vertical_traversal_uses_fallback_direction() {
        let line = TraversalLine {
            p_in: Vec3::new(0.0, 0.0, 0.0),
            p_out: Vec3::new(0.0, 0.0, 1.0),
        };
        assert!(horizontal_normal(&(line.p_out - line.p_in)).is_none());
        let fallback = horizontal_normal(&Vec3::new(8.0, 0.0, 0.0)).unwrap();
        assert!((fallback.dot(&Vec3::x())).abs() < 1e-12 && fallback.z == 0.0);
    }

    #[test]
    fn identical_endpoints_give_degenerate_edge() {
        let (g, s, _) = world(vec![]);
        let graph = TopoGraph::build(&g, &s, &s, 1.0).unwrap();
        assert_eq!(graph.edges().len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = SamplerParams {
            uniform_mix: 0.0,
            ..Default::default()
        };
        let st = sample_guided(&graph, &g, &mut rng, &params).unwrap();
        assert!(g.is_free(&st.p));
    }

    #[test]
    fn graph_is_deterministic() {
        let (g, s, t) = world(vec![wall()]);
        assert_eq!(
            TopoGraph::build(&g, &s, &t, 1.0).unwrap(),
            TopoGraph::build(&g, &s, &t, 1.0).unwrap()
        );
    }

    #[test]
    fn degenerate_spreads_sample_on_edge() {
        let (g, s, t) = world(vec![]);
        let graph = TopoGraph::build(&g, &s, &t, 1.0).unwrap();
        let params = SamplerParams {
            sigma_pos: 1e-12,
            sigma_dir: 0.0,
            uniform_mix: 0.0,
            v_max: 5.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let st = sample_guided(&graph, &g, &mut rng, &params).unwrap();
            assert!(st.p.y.abs() < 1e-9 && (st.p.z - 1.0).abs() < 1e-9);
            assert!(st.v.y.abs() < 1e-9 * st.v.norm() && st.v.x > 0.0);
        }
    }

    #[test]
    fn velocity_mostly_follows_edge() {
        let (g, s, t) = world(vec![]);
        let graph = TopoGraph::build(&g, &s, &t, 1.0).unwrap();
        let params = SamplerParams {
            uniform_mix: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let forward = (0..n)
            .filter(|_| sample_guided(&graph, &g, &mut rng, &params).unwrap().v.x > 0.0)
            .count();
        // analytic: P(|α|<90°)·P(|β|<90°) with σ = 30° ≈ 0.9946
        assert!(forward as f64 / n as f64 >= 0.95, "{forward}");
    }

    #[test]
    fn uniform_mix_one_is_uniform_over_free_cells() {
        // Free space split into 8 equal octants of the bounds; chi-square over them.
        let (g, s, t) = world(vec![wall()]);
        let graph = TopoGraph::build(&g, &s, &t, 1.0).unwrap();
        let params = SamplerParams {
            uniform_mix: 1.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Bins: quadrants in x-y of the free region (wall is symmetric in x/y).
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            let st = sample_guided(&graph, &g, &mut rng, &params).unwrap();
            assert!(g.is_free(&st.p));
            let q = (st.p.x > 0.0) as usize * 2 + (st.p.y > 0.0) as usize;
            counts[q] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 3 degrees of freedom, p = 0.001 critical value 16.27
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn samples_are_free_with_bounded_speed() {
        let (g, s, t) = world(vec![wall()]);
        let graph = TopoGraph::build(&g, &s, &t, 1.0).unwrap();
        let params = SamplerParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5000 {
            let st = sample_guided(&graph, &g, &mut rng, &params).unwrap();
            assert!(g.is_free(&st.p));
            let speed = st.v.norm();
            assert!(speed > 0.0 && speed <= params.v_max + 1e-12);
        }
    }

    #[test]
    fn graph_dump_json() {
        let (g, s, t) = world(vec![wall()]);
        let graph = TopoGraph::build(&g, &s, &t, 1.0).unwrap();
        let v = serde_json::to_value(graph.dump()).unwrap();
        assert_eq!(v["edges"].as_array().unwrap().len(), 4);
        assert_eq!(v["vertices"][0], serde_json::json!([-4.0, 0.0, 1.0]));
    }
}
