//! Voxel occupancy map, obstacle scenarios, and collision queries.
//!
//! Obstacles are inflated by the robot radius when the grid is built, so every
//! downstream query is a point lookup. Anything outside the scenario bounds
//! counts as occupied.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{State, Vec3};

pub const DEFAULT_RESOLUTION: f64 = 0.1;
pub const DEFAULT_INFLATION: f64 = 0.3;

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    fn is_valid(&self) -> bool {
        (0..3).all(|a| self.min[a].is_finite() && self.max[a].is_finite() && self.max[a] > self.min[a])
    }
}

/// Obstacle primitive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Obstacle {
    Box { min: Vec3, max: Vec3 },
    /// Vertical cylinder; `center` is the midpoint of its axis.
    Cylinder { center: Vec3, radius: f64, height: f64 },
}

impl Obstacle {
    /// Euclidean distance from `p` to the solid (zero inside).
    pub fn distance(&self, p: &Vec3) -> f64 {
        match *self {
            Obstacle::Box { min, max } => {
                let d = Vec3::from_fn(|a, _| (min[a] - p[a]).max(0.0).max(p[a] - max[a]));
                d.norm()
            }
            Obstacle::Cylinder {
                center,
                radius,
                height,
            } => {
                let radial = ((p.x - center.x).powi(2) + (p.y - center.y).powi(2)).sqrt();
                let dr = (radial - radius).max(0.0);
                let dz = ((p.z - center.z).abs() - 0.5 * height).max(0.0);
                (dr * dr + dz * dz).sqrt()
            }
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.distance(p) == 0.0
    }

    /// Bounding box grown by `margin` on every side.
    pub fn bounding_box(&self, margin: f64) -> Aabb {
        let m = Vec3::repeat(margin);
        match *self {
            Obstacle::Box { min, max } => Aabb::new(min - m, max + m),
            Obstacle::Cylinder {
                center,
                radius,
                height,
            } => {
                let half = Vec3::new(radius, radius, 0.5 * height);
                Aabb::new(center - half - m, center + half + m)
            }
        }
    }
}

/// A planning problem: world box, obstacles, and boundary states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bounds: Aabb,
    pub obstacles: Vec<Obstacle>,
    pub start: State,
    pub goal: State,
    #[serde(default)]
    pub seed: u64,
}

/// Immutable voxel map. Cells are indexed x-fastest.
#[derive(Clone, Debug)]
pub struct OccupancyGrid {
    origin: Vec3,
    resolution: f64,
    dims: [usize; 3],
    cells: Vec<bool>,
    inflation: f64,
    bounds: Aabb,
}

impl OccupancyGrid {
    /// Rasterizes `scenario`: a cell is occupied iff its center lies within
    /// `inflation` of some obstacle.
    pub fn build(scenario: &Scenario, resolution: f64, inflation: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::Parameter(format!("grid resolution {resolution}")));
        }
        if !(inflation >= 0.0 && inflation.is_finite()) {
            return Err(Error::Parameter(format!("inflation {inflation}")));
        }
        let bounds = scenario.bounds;
        if !bounds.is_valid() {
            return Err(Error::Parameter("scenario bounds must have positive extent".into()));
        }
        let ext = bounds.extent();
        let dims: [usize; 3] =
            std::array::from_fn(|a| ((ext[a] / resolution - 1e-9).ceil() as usize).max(1));
        let mut grid = Self {
            origin: bounds.min,
            resolution,
            dims,
            cells: vec![false; dims[0] * dims[1] * dims[2]],
            inflation,
            bounds,
        };
        for obs in &scenario.obstacles {
            grid.mark(obs);
        }
        Ok(grid)
    }

    fn mark(&mut self, obs: &Obstacle) {
        let bb = obs.bounding_box(self.inflation);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let l = ((bb.min[a] - self.origin[a]) / self.resolution - 0.5).floor() as isize;
            let h = ((bb.max[a] - self.origin[a]) / self.resolution - 0.5).ceil() as isize;
            let l = l.max(0);
            let h = h.min(self.dims[a] as isize - 1);
            if h < l {
                return;
            }
            lo[a] = l as usize;
            hi[a] = h as usize;
        }
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let c = self.cell_center([i, j, k]);
                    if obs.distance(&c) <= self.inflation {
                        let idx = self.flat([i, j, k]);
                        self.cells[idx] = true;
                    }
                }
            }
        }
    }

    #[inline]
    fn flat(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn inflation(&self) -> f64 {
        self.inflation
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn cell_center(&self, idx: [usize; 3]) -> Vec3 {
        Vec3::from_fn(|a, _| self.origin[a] + (idx[a] as f64 + 0.5) * self.resolution)
    }

    /// Cell containing `p`, or `None` when outside the scenario bounds.
    #[inline]
    pub fn cell_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        if !self.bounds.contains(p) {
            return None;
        }
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.resolution).floor();
            if f < 0.0 {
                return None;
            }
            idx[a] = (f as usize).min(self.dims[a] - 1);
        }
        Some(idx)
    }

    pub fn is_cell_occupied(&self, idx: [usize; 3]) -> bool {
        self.cells[self.flat(idx)]
    }

    /// True iff `p` is inside the bounds and its cell is free.
    #[inline]
    pub fn is_free(&self, p: &Vec3) -> bool {
        match self.cell_of(p) {
            Some(idx) => !self.cells[self.flat(idx)],
            None => false,
        }
    }

    /// Marches from `origin` along `dir` in steps of half a cell and returns
    /// the first point that is free. Searches *for* free space, so an origin
    /// that is already free is returned unchanged.
    pub fn raycast_to_free(&self, origin: &Vec3, dir: &Vec3, max_dist: f64) -> Option<Vec3> {
        let step = 0.5 * self.resolution;
        let n = (max_dist / step).floor() as usize;
        (0..=n)
            .map(|k| origin + dir * (k as f64 * step))
            .find(|p| self.is_free(p))
    }

    /// Whether two free points are joined by a 6-connected chain of free cells.
    pub fn free_space_connected(&self, a: &Vec3, b: &Vec3) -> bool {
        let (Some(start), Some(goal)) = (self.cell_of(a), self.cell_of(b)) else {
            return false;
        };
        if self.is_cell_occupied(start) || self.is_cell_occupied(goal) {
            return false;
        }
        let mut seen = vec![false; self.cells.len()];
        let mut queue = VecDeque::from([start]);
        seen[self.flat(start)] = true;
        while let Some(c) = queue.pop_front() {
            if c == goal {
                return true;
            }
            for a in 0..3 {
                for delta in [-1isize, 1] {
                    let n = c[a] as isize + delta;
                    if n < 0 || n >= self.dims[a] as isize {
                        continue;
                    }
                    let mut nb = c;
                    nb[a] = n as usize;
                    let f = self.flat(nb);
                    if !seen[f] && !self.cells[f] {
                        seen[f] = true;
                        queue.push_back(nb);
                    }
                }
            }
        }
        false
    }
}

/// Free-function form of [`OccupancyGrid::build`].
pub fn build_grid(scenario: &Scenario, resolution: f64, inflation: f64) -> Result<OccupancyGrid> {
    OccupancyGrid::build(scenario, resolution, inflation)
}

/// Ranges used when drawing random obstacles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioGenerator {
    /// Box edge length range in x and y (m).
    pub box_size: (f64, f64),
    /// Cylinder radius range (m).
    pub cylinder_radius: (f64, f64),
    /// Obstacle height as a fraction of the bounds height.
    pub height_fraction: (f64, f64),
    /// No obstacle may come closer than this to the start or goal (m).
    pub clearance: f64,
}

impl Default for ScenarioGenerator {
    fn default() -> Self {
        Self {
            box_size: (0.5, 1.5),
            cylinder_radius: (0.25, 0.75),
            height_fraction: (1.0, 1.0),
            clearance: 1.0,
        }
    }
}

impl ScenarioGenerator {
    /// Deterministic random scenario for `seed`.
    ///
    /// Obstacles are boxes or vertical cylinders with equal probability,
    /// placed uniformly in the horizontal extent of `bounds` and standing on
    /// its floor. Draws that would intrude into the clearance sphere around
    /// the start or goal are redrawn.
    pub fn generate(
        &self,
        seed: u64,
        bounds: Aabb,
        n_obstacles: usize,
        start: State,
        goal: State,
    ) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut obstacles = Vec::with_capacity(n_obstacles);
        const MAX_REDRAWS: usize = 1000;
        for _ in 0..n_obstacles {
            for _ in 0..MAX_REDRAWS {
                let obs = self.draw(&mut rng, &bounds);
                let clear = [start.p, goal.p]
                    .iter()
                    .all(|p| obs.distance(p) > self.clearance);
                if clear {
                    obstacles.push(obs);
                    break;
                }
            }
        }
        Scenario {
            bounds,
            obstacles,
            start,
            goal,
            seed,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, bounds: &Aabb) -> Obstacle {
        let x = rng.random_range(bounds.min.x..=bounds.max.x);
        let y = rng.random_range(bounds.min.y..=bounds.max.y);
        let frac = uniform(rng, self.height_fraction);
        let height = frac * bounds.extent().z;
        let z_mid = bounds.min.z + 0.5 * height;
        if rng.random_bool(0.5) {
            let sx = uniform(rng, self.box_size);
            let sy = uniform(rng, self.box_size);
            Obstacle::Box {
                min: Vec3::new(x - 0.5 * sx, y - 0.5 * sy, bounds.min.z),
                max: Vec3::new(x + 0.5 * sx, y + 0.5 * sy, bounds.min.z + height),
            }
        } else {
            Obstacle::Cylinder {
                center: Vec3::new(x, y, z_mid),
                radius: uniform(rng, self.cylinder_radius),
                height,
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// [`ScenarioGenerator::generate`] with default obstacle ranges.
pub fn random_scenario(seed: u64, bounds: Aabb, n_obstacles: usize, start: State, goal: State) -> Scenario {
    ScenarioGenerator::default().generate(seed, bounds, n_obstacles, start, goal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scenario(obstacles: Vec<Obstacle>) -> Scenario {
        Scenario {
            bounds: Aabb::new(Vec3::new(-2.0, -2.0, -2.0), Vec3::new(2.0, 2.0, 2.0)),
            obstacles,
            start: State::at_rest(Vec3::new(-1.5, 0.0, 0.0)),
            goal: State::at_rest(Vec3::new(1.5, 0.0, 0.0)),
            seed: 0,
        }
    }

    fn unit_cube() -> Obstacle {
        Obstacle::Box {
            min: Vec3::zeros(),
            max: Vec3::repeat(1.0),
        }
    }

    #[test]
    fn empty_scenario_is_all_free() {
        let g = OccupancyGrid::build(&scenario(vec![]), 0.25, 0.3).unwrap();
        assert_eq!(g.occupied_count(), 0);
        assert_eq!(g.dims(), [16, 16, 16]);
    }

    #[test]
    fn full_cover_box_is_all_occupied() {
        let b = Obstacle::Box {
            min: Vec3::repeat(-2.0),
            max: Vec3::repeat(2.0),
        };
        let g = OccupancyGrid::build(&scenario(vec![b]), 0.25, 0.0).unwrap();
        assert_eq!(g.occupied_count(), g.cell_count());
    }

    #[test]
    fn unit_cube_cell_count_matches_point_in_box_oracle() {
        let s = scenario(vec![unit_cube()]);
        let g = OccupancyGrid::build(&s, 0.1, 0.0).unwrap();
        // Oracle: count cell centers inside the cube by direct test.
        let mut oracle = 0;
        for k in 0..g.dims()[2] {
            for j in 0..g.dims()[1] {
                for i in 0..g.dims()[0] {
                    let c = g.cell_center([i, j, k]);
                    if (0..3).all(|a| c[a] >= 0.0 && c[a] <= 1.0) {
                        oracle += 1;
                    }
                }
            }
        }
        assert_eq!(g.occupied_count(), oracle);
        // Volume / cell volume = 1000, within one boundary layer (11^3 - 9^3 spread).
        let n = g.occupied_count() as i64;
        assert!((729..=1331).contains(&n), "{n}");
    }

    #[test]
    fn rejects_bad_resolution() {
        assert!(OccupancyGrid::build(&scenario(vec![]), 0.0, 0.3).is_err());
        assert!(OccupancyGrid::build(&scenario(vec![]), -0.1, 0.3).is_err());
        assert!(OccupancyGrid::build(&scenario(vec![]), 0.1, -0.3).is_err());
    }

    #[test]
    fn point_queries() {
        let g = OccupancyGrid::build(&scenario(vec![unit_cube()]), 0.1, 0.0).unwrap();
        assert!(!g.is_free(&Vec3::new(5.0, 0.0, 0.0)));
        assert!(g.is_free(&Vec3::new(-1.0, -1.0, -1.0)));
        assert!(!g.is_free(&Vec3::repeat(0.5)));
        let empty = OccupancyGrid::build(&scenario(vec![]), 0.1, 0.0).unwrap();
        assert!(empty.is_free(&Vec3::zeros()));
    }

    #[test]
    fn cylinder_membership() {
        let c = Obstacle::Cylinder {
            center: Vec3::new(0.0, 0.0, 0.0),
            radius: 0.5,
            height: 2.0,
        };
        assert!(c.contains(&Vec3::new(0.4, 0.0, 0.9)));
        assert!(!c.contains(&Vec3::new(0.6, 0.0, 0.0)));
        assert!((c.distance(&Vec3::new(1.5, 0.0, 0.0)) - 1.0).abs() < 1e-12);
        assert!((c.distance(&Vec3::new(0.0, 0.0, 2.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inflation_grows_occupancy() {
        let s = scenario(vec![unit_cube()]);
        let g0 = OccupancyGrid::build(&s, 0.1, 0.0).unwrap();
        let g1 = OccupancyGrid::build(&s, 0.1, 0.3).unwrap();
        assert!(g1.occupied_count() > g0.occupied_count());
        assert!(!g1.is_free(&Vec3::new(1.25, 0.5, 0.5)));
        assert!(g0.is_free(&Vec3::new(1.25, 0.5, 0.5)));
    }

    #[test]
    fn raycast_from_free_origin_is_identity() {
        let g = OccupancyGrid::build(&scenario(vec![unit_cube()]), 0.1, 0.0).unwrap();
        let o = Vec3::new(-1.0, 0.0, 0.0);
        assert_eq!(g.raycast_to_free(&o, &Vec3::x(), 1.0), Some(o));
    }

    #[test]
    fn raycast_exits_slab() {
        // 1 m thick slab in x spanning the whole y/z range.
        let slab = Obstacle::Box {
            min: Vec3::new(-0.5, -2.0, -2.0),
            max: Vec3::new(0.5, 2.0, 2.0),
        };
        let g = OccupancyGrid::build(&scenario(vec![slab]), 0.05, 0.0).unwrap();
        let o = Vec3::new(0.0, 0.3, 0.2);
        let hit = g.raycast_to_free(&o, &Vec3::x(), 3.0).unwrap();
        let d = (hit - o).norm();
        // analytic exit distance 0.5 m, plus at most one cell and one step
        assert!((0.5 - 1e-9..=0.5 + 0.05 + 0.025 + 1e-9).contains(&d), "{d}");
        assert!(g.is_free(&hit));
    }

    #[test]
    fn raycast_inside_long_obstacle_finds_nothing() {
        let b = Obstacle::Box {
            min: Vec3::repeat(-2.0),
            max: Vec3::repeat(2.0),
        };
        let g = OccupancyGrid::build(&scenario(vec![b]), 0.1, 0.0).unwrap();
        assert_eq!(g.raycast_to_free(&Vec3::zeros(), &Vec3::x(), 1.0), None);
    }

    fn forty_box() -> Aabb {
        Aabb::new(Vec3::zeros(), Vec3::new(40.0, 40.0, 3.0))
    }

    #[test]
    fn random_scenario_is_deterministic() {
        let s = State::at_rest(Vec3::new(2.0, 2.0, 1.0));
        let g = State::at_rest(Vec3::new(38.0, 38.0, 1.0));
        let a = random_scenario(42, forty_box(), 100, s, g);
        let b = random_scenario(42, forty_box(), 100, s, g);
        assert_eq!(a, b);
        assert_eq!(a.obstacles.len(), 100);
        assert!(random_scenario(42, forty_box(), 0, s, g).obstacles.is_empty());
        assert_ne!(a, random_scenario(43, forty_box(), 100, s, g));
    }

    #[test]
    fn random_scenario_keeps_endpoints_free() {
        let s = State::at_rest(Vec3::new(2.0, 2.0, 1.0));
        let g = State::at_rest(Vec3::new(38.0, 38.0, 1.0));
        for seed in 0..20 {
            let sc = random_scenario(seed, forty_box(), 100, s, g);
            let grid = OccupancyGrid::build(&sc, DEFAULT_RESOLUTION, DEFAULT_INFLATION).unwrap();
            assert!(grid.is_free(&s.p) && grid.is_free(&g.p), "seed {seed}");
        }
    }

    #[test]
    fn scenario_json_layout() {
        let sc = scenario(vec![
            unit_cube(),
            Obstacle::Cylinder {
                center: Vec3::new(1.0, 1.0, 0.0),
                radius: 0.2,
                height: 1.0,
            },
        ]);
        let v = serde_json::to_value(&sc).unwrap();
        assert_eq!(v["obstacles"][0]["type"], "box");
        assert_eq!(v["obstacles"][1]["type"], "cylinder");
        assert_eq!(v["start"]["p"], serde_json::json!([-1.5, 0.0, 0.0]));
        let back: Scenario = serde_json::from_value(v).unwrap();
        assert_eq!(back, sc);
    }

    #[test]
    fn connectivity_through_wall_gap() {
        let wall_a = Obstacle::Box {
            min: Vec3::new(-0.2, -2.0, -2.0),
            max: Vec3::new(0.2, -0.5, 2.0),
        };
        let wall_b = Obstacle::Box {
            min: Vec3::new(-0.2, 0.5, -2.0),
            max: Vec3::new(0.2, 2.0, 2.0),
        };
        let g = OccupancyGrid::build(&scenario(vec![wall_a, wall_b]), 0.1, 0.0).unwrap();
        assert!(g.free_space_connected(&Vec3::new(-1.5, 0.0, 0.0), &Vec3::new(1.5, 0.0, 0.0)));
        let sealed = Obstacle::Box {
            min: Vec3::new(-0.2, -2.0, -2.0),
            max: Vec3::new(0.2, 2.0, 2.0),
        };
        let g = OccupancyGrid::build(&scenario(vec![sealed]), 0.1, 0.0).unwrap();
        assert!(!g.free_space_connected(&Vec3::new(-1.5, 0.0, 0.0), &Vec3::new(1.5, 0.0, 0.0)));
    }

    proptest! {
        #[test]
        fn free_implies_in_bounds(x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..5.0) {
            let g = OccupancyGrid::build(&scenario(vec![unit_cube()]), 0.2, 0.1).unwrap();
            let p = Vec3::new(x, y, z);
            if g.is_free(&p) {
                prop_assert!(g.bounds().contains(&p));
            }
        }

        #[test]
        fn raycast_result_is_free_and_within_range(
            ox in -1.9f64..1.9, oy in -1.9f64..1.9, oz in -1.9f64..1.9,
            theta in 0.0f64..std::f64::consts::TAU, phi in -1.5f64..1.5, max_dist in 0.1f64..4.0,
        ) {
            let g = OccupancyGrid::build(&scenario(vec![unit_cube()]), 0.1, 0.2).unwrap();
            let dir = Vec3::new(phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin());
            let o = Vec3::new(ox, oy, oz);
            if let Some(p) = g.raycast_to_free(&o, &dir, max_dist) {
                prop_assert!(g.is_free(&p));
                prop_assert!((p - o).norm() <= max_dist + 1e-9);
            }
        }
    }
}
