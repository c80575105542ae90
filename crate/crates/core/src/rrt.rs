//! Anytime kinodynamic RRT*.
//!
//! Each iteration draws a state, finds the tree nodes that can reach it within
//! the near radius, attaches it to the cheapest feasible one, then re-parents
//! nodes it can reach more cheaply than their current route. After every
//! insertion a direct connection from the new node to the goal is tried.
//!
//! The goal is kept outside the node list as a link to its best parent. Its
//! cost is read through that parent, so improvements from rewiring an
//! ancestor show up without extra bookkeeping.

use std::time::{Duration, Instant};

use rand::RngCore;
use serde::Serialize;

use crate::bvp::{self, PlannerParams, TransitionResult};
use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;
use crate::state::{PolySegment, State, Trajectory, Vec3};
use crate::topo::StateSampler;

/// Relative margin on the reachability prefilter so that it never rejects a
/// node whose exact cost is below the radius.
const PREFILTER_SLACK: f64 = 1e-9;

/// Minimum strict improvement for a rewire, absorbing round-off in summed costs.
const REWIRE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub state: State,
    pub parent: Option<usize>,
    /// Segment from the parent's state to this state; `None` for the root.
    pub edge: Option<PolySegment>,
    /// Transition cost of `edge`.
    pub edge_cost: f64,
    pub cost_from_start: f64,
    children: Vec<usize>,
}

impl TreeNode {
    pub fn children(&self) -> &[usize] {
        &self.children
    }
}

#[derive(Clone, Debug, PartialEq)]
struct GoalLink {
    parent: usize,
    edge: PolySegment,
    edge_cost: f64,
}

/// Search tree rooted at the start state.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    goal_state: State,
    goal: Option<GoalLink>,
}

/// JSON row of a tree dump.
#[derive(Clone, Debug, Serialize)]
pub struct NodeDump {
    pub id: usize,
    pub parent: Option<usize>,
    pub p: Vec3,
    pub v: Vec3,
    pub cost: f64,
}

impl Tree {
    pub fn new(root: State, goal: State) -> Self {
        Self {
            nodes: vec![TreeNode {
                state: root,
                parent: None,
                edge: None,
                edge_cost: 0.0,
                cost_from_start: 0.0,
                children: Vec::new(),
            }],
            goal_state: goal,
            goal: None,
        }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn goal_state(&self) -> &State {
        &self.goal_state
    }

    /// Node the goal is currently attached to.
    pub fn goal_parent(&self) -> Option<usize> {
        self.goal.as_ref().map(|g| g.parent)
    }

    /// Cost of the current route to the goal, infinite when there is none.
    pub fn goal_cost(&self) -> f64 {
        self.goal.as_ref().map_or(f64::INFINITY, |g| {
            self.nodes[g.parent].cost_from_start + g.edge_cost
        })
    }

    /// Appends `state` as a child of `parent` through `edge`.
    pub fn insert(&mut self, parent: usize, state: State, edge: &TransitionResult) -> usize {
        let id = self.nodes.len();
        let cost_from_start = self.nodes[parent].cost_from_start + edge.cost;
        self.nodes.push(TreeNode {
            state,
            parent: Some(parent),
            edge: Some(edge.segment),
            edge_cost: edge.cost,
            cost_from_start,
            children: Vec::new(),
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Moves `node` under `new_parent` and updates the costs of its subtree.
    /// Refuses (returns false) if that would create a cycle.
    pub fn reparent(&mut self, node: usize, new_parent: usize, edge: &TransitionResult) -> bool {
        if node == 0 || self.is_ancestor(node, new_parent) {
            return false;
        }
        if let Some(old) = self.nodes[node].parent {
            self.nodes[old].children.retain(|&c| c != node);
        }
        self.nodes[new_parent].children.push(node);
        let n = &mut self.nodes[node];
        n.parent = Some(new_parent);
        n.edge = Some(edge.segment);
        n.edge_cost = edge.cost;
        self.propagate(node);
        true
    }

    /// True if `a` lies on the path from the root to `b` (or `a == b`).
    pub fn is_ancestor(&self, a: usize, b: usize) -> bool {
        let mut cur = Some(b);
        while let Some(c) = cur {
            if c == a {
                return true;
            }
            cur = self.nodes[c].parent;
        }
        false
    }

    /// Recomputes `cost_from_start` for `start` and all its descendants.
    fn propagate(&mut self, start: usize) {
        let mut stack = vec![start];
        while let Some(id) = stack.pop() {
            let parent = self.nodes[id].parent.expect("non-root");
            let cost = self.nodes[parent].cost_from_start + self.nodes[id].edge_cost;
            self.nodes[id].cost_from_start = cost;
            stack.extend_from_slice(&self.nodes[id].children);
        }
    }

    fn set_goal(&mut self, parent: usize, edge: &TransitionResult) {
        self.goal = Some(GoalLink {
            parent,
            edge: edge.segment,
            edge_cost: edge.cost,
        });
    }

    /// Root-to-`node` edges in forward order.
    pub fn path_segments(&self, node: usize) -> Vec<PolySegment> {
        let mut segs = Vec::new();
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            segs.push(self.nodes[cur].edge.expect("non-root has an edge"));
            cur = p;
        }
        segs.reverse();
        segs
    }

    pub fn dump(&self) -> Vec<NodeDump> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(id, n)| NodeDump {
                id,
                parent: n.parent,
                p: n.state.p,
                v: n.state.v,
                cost: n.cost_from_start,
            })
            .collect()
    }
}

/// Necessary condition for `transition_cost(a, b) < radius`.
///
/// A transition below `r` lasts `τ < r/ρ` and spends `½∫‖u‖² < r`. By
/// Cauchy-Schwarz the displacement beyond coasting is at most `√(2rτ³/3)`
/// and the velocity change at most `√(2rτ)`; coasting can use either end's
/// velocity by time reversal.
#[inline]
fn may_reach(a: &State, b: &State, radius: f64, rho: f64) -> bool {
    let r = radius * (1.0 + PREFILTER_SLACK);
    let tau = r / rho;
    let dv = (b.v - a.v).norm();
    if dv > (2.0 * r * tau).sqrt() {
        return false;
    }
    let coast = a.v.norm().min(b.v.norm()) * tau;
    (b.p - a.p).norm() <= coast + (2.0 * r * tau.powi(3) / 3.0).sqrt()
}

fn near_with_costs(tree: &Tree, x: &State, params: &PlannerParams, backward: bool) -> Vec<(usize, f64)> {
    let radius = params.effective_near_radius();
    let rho = params.rho;
    if !(radius > 0.0) {
        return Vec::new();
    }
    tree.nodes
        .iter()
        .enumerate()
        .filter_map(|(id, n)| {
            let (a, b) = if backward { (&n.state, x) } else { (x, &n.state) };
            if !may_reach(a, b, radius, rho) {
                return None;
            }
            let c = bvp::transition_cost_unchecked(a, b, rho);
            (c < radius).then_some((id, c))
        })
        .collect()
}

/// Nodes that can reach `x` with transition cost below the near radius.
pub fn backward_near(tree: &Tree, x: &State, params: &PlannerParams) -> Vec<usize> {
    near_with_costs(tree, x, params, true).into_iter().map(|(i, _)| i).collect()
}

/// Nodes reachable from `x` with transition cost below the near radius.
pub fn forward_near(tree: &Tree, x: &State, params: &PlannerParams) -> Vec<usize> {
    near_with_costs(tree, x, params, false).into_iter().map(|(i, _)| i).collect()
}

/// Cheapest feasible parent for `x` among `candidates`; ties go to the lower id.
pub fn choose_parent(
    tree: &Tree,
    candidates: &[usize],
    x: &State,
    grid: &OccupancyGrid,
    params: &PlannerParams,
) -> Option<(usize, TransitionResult)> {
    let ranked: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&id| (id, bvp::transition_cost_unchecked(&tree.nodes[id].state, x, params.rho)))
        .collect();
    choose_parent_ranked(tree, ranked, x, grid, params)
}

fn choose_parent_ranked(
    tree: &Tree,
    mut ranked: Vec<(usize, f64)>,
    x: &State,
    grid: &OccupancyGrid,
    params: &PlannerParams,
) -> Option<(usize, TransitionResult)> {
    for r in &mut ranked {
        r.1 += tree.nodes[r.0].cost_from_start;
    }
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().find_map(|(id, _)| {
        let edge = bvp::connect_unchecked(&tree.nodes[id].state, x, params.rho);
        (edge.tau > 0.0 && bvp::check_connection(&edge, grid, params)).then_some((id, edge))
    })
}

/// Re-parents candidates that are cheaper to reach through `new_node`.
/// Returns the number of rewired nodes.
pub fn rewire(
    tree: &mut Tree,
    candidates: &[usize],
    new_node: usize,
    grid: &OccupancyGrid,
    params: &PlannerParams,
) -> usize {
    let from = tree.nodes[new_node].state;
    let ranked: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&id| (id, bvp::transition_cost_unchecked(&from, &tree.nodes[id].state, params.rho)))
        .collect();
    rewire_ranked(tree, ranked, new_node, grid, params)
}

fn rewire_ranked(
    tree: &mut Tree,
    mut ranked: Vec<(usize, f64)>,
    new_node: usize,
    grid: &OccupancyGrid,
    params: &PlannerParams,
) -> usize {
    ranked.sort_by_key(|r| r.0);
    let from = tree.nodes[new_node].state;
    let mut count = 0;
    for (id, c) in ranked {
        if id == 0 || id == new_node {
            continue;
        }
        let via = tree.nodes[new_node].cost_from_start + c;
        if via >= tree.nodes[id].cost_from_start - REWIRE_EPS {
            continue;
        }
        if tree.is_ancestor(id, new_node) {
            continue;
        }
        let edge = bvp::connect_unchecked(&from, &tree.nodes[id].state, params.rho);
        if edge.tau > 0.0 && bvp::check_connection(&edge, grid, params) && tree.reparent(id, new_node, &edge) {
            count += 1;
        }
    }
    count
}

/// Concatenated root-to-`node` edges.
pub fn extract_trajectory(tree: &Tree, node: usize) -> Result<Trajectory> {
    let segs = tree.path_segments(node);
    if segs.is_empty() {
        return Err(Error::Trajectory("node is the root".into()));
    }
    Trajectory::new(segs)
}

/// Sample and/or wall-time limits; the planner stops at whichever comes first.
/// The `abandon_*` limits stop the run early only while no solution exists.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Budget {
    pub max_samples: usize,
    pub max_time: Option<Duration>,
    pub abandon_samples: Option<usize>,
    pub abandon_time: Option<Duration>,
}

impl Budget {
    pub fn samples(n: usize) -> Self {
        Self {
            max_samples: n,
            max_time: None,
            abandon_samples: None,
            abandon_time: None,
        }
    }

    pub fn time(limit: Duration) -> Self {
        Self {
            max_samples: usize::MAX,
            max_time: Some(limit),
            abandon_samples: None,
            abandon_time: None,
        }
    }

    fn exhausted(&self, samples: usize, elapsed: Duration, solved: bool) -> bool {
        samples >= self.max_samples
            || self.max_time.is_some_and(|t| elapsed >= t)
            || (!solved
                && (self.abandon_samples.is_some_and(|n| samples >= n)
                    || self.abandon_time.is_some_and(|t| elapsed >= t)))
    }
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    pub trajectory: Option<Trajectory>,
    /// Total cost of `trajectory`; infinite when no solution was found.
    pub cost: f64,
    /// Seconds until the first solution.
    pub first_solution_time: Option<f64>,
    /// `(seconds, best cost)` at every improvement of the incumbent.
    pub history: Vec<(f64, f64)>,
    /// Nodes in the final tree, root included.
    pub nodes_expanded: usize,
    pub samples_drawn: usize,
    pub tree: Tree,
}

impl PlanResult {
    pub fn solved(&self) -> bool {
        self.trajectory.is_some()
    }
}

/// Front-end planner over a fixed occupancy grid.
#[derive(Clone, Debug)]
pub struct Planner<'a> {
    grid: &'a OccupancyGrid,
    params: PlannerParams,
}

impl<'a> Planner<'a> {
    pub fn new(grid: &'a OccupancyGrid, params: PlannerParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { grid, params })
    }

    pub fn params(&self) -> &PlannerParams {
        &self.params
    }

    fn check_endpoint(&self, name: &str, x: &State) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::Precondition(format!("{name} state is not finite")));
        }
        if !self.grid.is_free(&x.p) {
            return Err(Error::Precondition(format!("{name} position is not free")));
        }
        if x.v.iter().any(|v| v.abs() > self.params.v_max) {
            return Err(Error::Precondition(format!("{name} velocity exceeds v_max")));
        }
        Ok(())
    }

    /// Runs the anytime loop until the budget is spent.
    pub fn plan(
        &self,
        x_init: &State,
        x_goal: &State,
        sampler: &dyn StateSampler,
        budget: Budget,
        rng: &mut dyn RngCore,
    ) -> Result<PlanResult> {
        self.check_endpoint("start", x_init)?;
        self.check_endpoint("goal", x_goal)?;
        let started = Instant::now();
        let params = &self.params;
        let grid = self.grid;
        let mut tree = Tree::new(*x_init, *x_goal);
        let mut history: Vec<(f64, f64)> = Vec::new();
        let mut first_solution_time = None;

        let mut record = |tree: &Tree, history: &mut Vec<(f64, f64)>| {
            let c = tree.goal_cost();
            if c.is_finite() && history.last().is_none_or(|&(_, best)| c < best) {
                let t = started.elapsed().as_secs_f64();
                first_solution_time.get_or_insert(t);
                history.push((t, c));
            }
        };

        self.try_goal(&mut tree, 0);
        record(&tree, &mut history);

        let mut samples = 0;
        while !budget.exhausted(samples, started.elapsed(), tree.goal.is_some()) {
            samples += 1;
            let Some(x) = sampler.sample(grid, rng) else {
                continue;
            };
            let backward = near_with_costs(&tree, &x, params, true);
            let Some((parent, edge)) = choose_parent_ranked(&tree, backward, &x, grid, params) else {
                continue;
            };
            let id = tree.insert(parent, x, &edge);
            let forward = near_with_costs(&tree, &x, params, false);
            rewire_ranked(&mut tree, forward, id, grid, params);
            self.try_goal(&mut tree, id);
            record(&tree, &mut history);
        }

        let trajectory = match tree.goal.as_ref() {
            Some(g) => {
                let mut segs = tree.path_segments(g.parent);
                segs.push(g.edge);
                Some(Trajectory::new(segs)?)
            }
            None => None,
        };
        Ok(PlanResult {
            trajectory,
            cost: tree.goal_cost(),
            first_solution_time,
            history,
            nodes_expanded: tree.len(),
            samples_drawn: samples,
            tree,
        })
    }

    /// Attaches the goal to `node` if that is cheaper than the current route.
    fn try_goal(&self, tree: &mut Tree, node: usize) {
        let from = tree.nodes[node].state;
        let goal = tree.goal_state;
        let c = bvp::transition_cost_unchecked(&from, &goal, self.params.rho);
        if tree.nodes[node].cost_from_start + c >= tree.goal_cost() {
            return;
        }
        let edge = bvp::connect_unchecked(&from, &goal, self.params.rho);
        if edge.tau > 0.0 && bvp::check_connection(&edge, self.grid, &self.params) {
            tree.set_goal(node, &edge);
        }
    }
}
