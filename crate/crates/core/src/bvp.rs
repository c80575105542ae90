//! Optimal double-integrator connections between two states.
//!
//! With acceleration as input and cost `∫ (ρ + ½‖u‖²) dt`, the unconstrained
//! optimum for a fixed duration τ is a cubic per axis with linear control
//! `u(t) = c3 t + c2`. Summing the closed-form energy over axes gives
//!
//! ```text
//! cost(τ) = ρτ + A/τ + B/τ² + C/τ³
//! A = 2 Σ (v0² + v0·v1 + v1²),  B = -6 Σ d (v0 + v1),  C = 6 Σ d²,  d = p1 - p0
//! ```
//!
//! and the stationarity condition `dcost/dτ = 0` is the quartic
//! `ρτ⁴ - Aτ² - 2Bτ - 3C = 0`. Constraints are checked after the fact: a
//! connection whose unconstrained optimum violates a bound is rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;
use crate::roots;
use crate::state::{PolySegment, State, Vec3};

/// Speed used to size the fallback search bracket for τ.
const FALLBACK_SPEED: f64 = 1.0;

/// Slack on velocity/acceleration limits absorbing round-off in the extrema.
const LIMIT_SLACK: f64 = 1e-9;

/// Dynamics limits and cost weighting shared by the front-end and back-end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    /// Weight of time against control energy.
    pub rho: f64,
    /// Per-axis speed bound (m/s).
    pub v_max: f64,
    /// Per-axis acceleration bound (m/s²).
    pub a_max: f64,
    /// Transition-cost threshold for near-sets. `None` derives it from
    /// `rho` and `hop_length` (see [`PlannerParams::effective_near_radius`]).
    pub near_radius: Option<f64>,
    /// Typical edge length used to derive the default near radius (m).
    pub hop_length: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            rho: 10.0,
            v_max: 5.0,
            a_max: 6.0,
            near_radius: None,
            hop_length: 2.0,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho", self.rho), ("v_max", self.v_max), ("a_max", self.a_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.hop_length > 0.0) {
            return Err(Error::Parameter(format!("hop_length {}", self.hop_length)));
        }
        if let Some(r) = self.near_radius {
            if !(r >= 0.0) {
                return Err(Error::Parameter(format!("near_radius {r}")));
            }
        }
        Ok(())
    }

    /// Twice the cost of a rest-to-rest hop of `hop_length`, unless an
    /// explicit radius is configured.
    pub fn effective_near_radius(&self) -> f64 {
        self.near_radius.unwrap_or_else(|| {
            let a = State::at_rest(Vec3::zeros());
            let b = State::at_rest(Vec3::new(self.hop_length, 0.0, 0.0));
            2.0 * transition_cost_unchecked(&a, &b, self.rho)
        })
    }
}

/// Outcome of connecting two states.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionResult {
    /// Cubic connecting segment (duration `tau`).
    pub segment: PolySegment,
    pub tau: f64,
    /// `ρ τ + ½ ∫ ‖u‖² dt`.
    pub cost: f64,
    /// Set once the connection has been checked against limits and the map.
    pub feasible: Option<bool>,
}

#[derive(Clone, Copy, Debug)]
struct CostTerms {
    a: f64,
    b: f64,
    c: f64,
}

impl CostTerms {
    #[inline]
    fn new(x0: &State, x1: &State) -> Self {
        let d = x1.p - x0.p;
        let (v0, v1) = (x0.v, x1.v);
        Self {
            a: 2.0 * (v0.norm_squared() + v0.dot(&v1) + v1.norm_squared()),
            b: -6.0 * d.dot(&(v0 + v1)),
            c: 6.0 * d.norm_squared(),
        }
    }

    #[inline]
    fn is_identity(&self) -> bool {
        self.a == 0.0 && self.b == 0.0 && self.c == 0.0
    }

    #[inline]
    fn cost(&self, tau: f64, rho: f64) -> f64 {
        let inv = 1.0 / tau;
        rho * tau + inv * (self.a + inv * (self.b + inv * self.c))
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("rho must be positive, got {rho}")))
    }
}

/// Cost of the optimal fixed-duration connection, without building it.
pub fn cost_at(x0: &State, x1: &State, tau: f64, rho: f64) -> f64 {
    CostTerms::new(x0, x1).cost(tau, rho)
}

/// Optimal fixed-duration connection.
pub fn fixed_time_connect(x0: &State, x1: &State, tau: f64, rho: f64) -> Result<TransitionResult> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
    }
    check_rho(rho)?;
    Ok(fixed_time_connect_unchecked(x0, x1, tau, rho))
}

fn fixed_time_connect_unchecked(x0: &State, x1: &State, tau: f64, rho: f64) -> TransitionResult {
    let mut coeffs = [[0.0; crate::state::MAX_DEGREE + 1]; 3];
    let mut energy = 0.0;
    let t2 = tau * tau;
    let t3 = t2 * tau;
    for k in 0..3 {
        let dp = x1.p[k] - x0.p[k] - x0.v[k] * tau;
        let dv = x1.v[k] - x0.v[k];
        // u(t) = c3 t + c2
        let c3 = (6.0 * dv * tau - 12.0 * dp) / t3;
        let c2 = (6.0 * dp - 2.0 * dv * tau) / t2;
        coeffs[k][0] = x0.p[k];
        coeffs[k][1] = x0.v[k];
        coeffs[k][2] = 0.5 * c2;
        coeffs[k][3] = c3 / 6.0;
        energy += 0.5 * (c3 * c3 * t3 / 3.0 + c3 * c2 * t2 + c2 * c2 * tau);
    }
    TransitionResult {
        segment: PolySegment::from_raw(coeffs, 3, tau),
        tau,
        cost: rho * tau + energy,
        feasible: None,
    }
}

/// Arrival time minimizing the transition cost; 0 for identical states.
pub fn optimal_tau(x0: &State, x1: &State, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(optimal_tau_unchecked(x0, x1, rho))
}

fn optimal_tau_unchecked(x0: &State, x1: &State, rho: f64) -> f64 {
    let terms = CostTerms::new(x0, x1);
    if x0 == x1 || terms.is_identity() {
        return 0.0;
    }
    // ρτ⁴ - Aτ² - 2Bτ - 3C = 0
    let candidates = roots::quartic(rho, 0.0, -terms.a, -2.0 * terms.b, -3.0 * terms.c);
    let best = candidates
        .into_iter()
        .filter(|&t| t > 0.0 && t.is_finite())
        .map(|t| (t, terms.cost(t, rho)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    match best {
        Some((t, _)) => t,
        None => {
            let upper = 10.0 * ((x1.p - x0.p).norm() / FALLBACK_SPEED + 1.0);
            golden_section(|t| terms.cost(t, rho), 1e-9, upper)
        }
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Minimal transition cost from `x0` to `x1`.
pub fn transition_cost(x0: &State, x1: &State, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(transition_cost_unchecked(x0, x1, rho))
}

#[inline]
pub(crate) fn transition_cost_unchecked(x0: &State, x1: &State, rho: f64) -> f64 {
    let tau = optimal_tau_unchecked(x0, x1, rho);
    if tau == 0.0 {
        return 0.0;
    }
    CostTerms::new(x0, x1).cost(tau, rho)
}

/// Optimal free-time connection. Identical states give a zero-length segment
/// with zero cost.
pub fn connect(x0: &State, x1: &State, rho: f64) -> Result<TransitionResult> {
    check_rho(rho)?;
    Ok(connect_unchecked(x0, x1, rho))
}

pub(crate) fn connect_unchecked(x0: &State, x1: &State, rho: f64) -> TransitionResult {
    let tau = optimal_tau_unchecked(x0, x1, rho);
    if tau == 0.0 {
        let segment = PolySegment::linear(x0.p, x0.v, 0.0).expect("finite state");
        return TransitionResult {
            segment: segment.elevated(3).expect("degree 3 fits"),
            tau: 0.0,
            cost: 0.0,
            feasible: None,
        };
    }
    fixed_time_connect_unchecked(x0, x1, tau, rho)
}

/// Spacing of collision samples along a segment, in cells. Coarser strides
/// let curves clip the corners of occupied cells between samples.
pub const COLLISION_STRIDE: f64 = 0.1;

/// Velocity/acceleration bounds per axis plus collision sampling at a spatial
/// stride of at most [`COLLISION_STRIDE`] cells.
pub fn segment_feasible(seg: &PolySegment, grid: &OccupancyGrid, v_max: f64, a_max: f64) -> bool {
    let acc = seg.max_abs_axis(2);
    if acc.iter().any(|&a| a > a_max * (1.0 + LIMIT_SLACK)) {
        return false;
    }
    let vel = seg.max_abs_axis(1);
    if vel.iter().any(|&v| v > v_max * (1.0 + LIMIT_SLACK)) {
        return false;
    }
    // Upper bound on speed from the per-axis maxima.
    let v_bound = (vel[0] * vel[0] + vel[1] * vel[1] + vel[2] * vel[2]).sqrt();
    segment_collision_free(seg, grid, v_bound)
}

fn segment_collision_free(seg: &PolySegment, grid: &OccupancyGrid, v_bound: f64) -> bool {
    let tau = seg.duration();
    let stride = COLLISION_STRIDE * grid.resolution();
    let n = if v_bound * tau <= stride {
        1
    } else {
        (v_bound * tau / stride).ceil() as usize
    };
    (0..=n).all(|k| grid.is_free(&seg.position(tau * k as f64 / n as f64)))
}

/// Whether a connection respects the dynamic limits and stays in free space.
pub fn check_connection(result: &TransitionResult, grid: &OccupancyGrid, params: &PlannerParams) -> bool {
    segment_feasible(&result.segment, grid, params.v_max, params.a_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Aabb, Obstacle, Scenario};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s1(p: f64, v: f64) -> State {
        State::new(Vec3::new(p, 0.0, 0.0), Vec3::new(v, 0.0, 0.0))
    }

    /// Composite Simpson on the control `u = p''` of a segment.
    fn quadrature_cost(seg: &PolySegment, rho: f64) -> f64 {
        let n = 2000;
        let tau = seg.duration();
        let h = tau / n as f64;
        let f = |t: f64| rho + 0.5 * seg.eval_unchecked(t, 2).norm_squared();
        let mut s = f(0.0) + f(tau);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn stationary_connection_costs_rho() {
        let x = State::at_rest(Vec3::new(1.0, 2.0, 3.0));
        let r = fixed_time_connect(&x, &x, 1.0, 2.5).unwrap();
        assert_eq!(r.cost, 2.5);
        assert_eq!(r.segment.eval(0.5, 2).unwrap(), Vec3::zeros());
    }

    #[test]
    fn rest_to_rest_unit_coefficients() {
        let r = fixed_time_connect(&s1(0.0, 0.0), &s1(1.0, 0.0), 1.0, 1.0).unwrap();
        // u(t) = -12 t + 6
        assert!((r.segment.eval(0.0, 2).unwrap().x - 6.0).abs() < 1e-12);
        assert!((r.segment.eval(0.0, 3).unwrap().x + 12.0).abs() < 1e-12);
        let energy = r.cost - 1.0;
        assert!((energy - 6.0).abs() < 1e-12);
        assert!((quadrature_cost(&r.segment, 1.0) - r.cost).abs() < 1e-9);
    }

    #[test]
    fn velocity_change_energy() {
        let r = fixed_time_connect(&s1(0.0, 0.0), &s1(0.0, 1.0), 1.0, 1.0).unwrap();
        // ∫u² = 4
        assert!((2.0 * (r.cost - 1.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_time_rejects_nonpositive_tau() {
        let x = s1(0.0, 0.0);
        assert!(fixed_time_connect(&x, &x, 0.0, 1.0).is_err());
        assert!(fixed_time_connect(&x, &x, -1.0, 1.0).is_err());
        assert!(optimal_tau(&x, &x, 0.0).is_err());
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        let r = fixed_time_connect(
            &State::new(Vec3::new(0.0, 1.0, 2.0), Vec3::new(1.0, -1.0, 0.5)),
            &State::new(Vec3::new(3.0, 0.0, 2.5), Vec3::new(0.0, 2.0, -1.0)),
            1.7,
            1.0,
        )
        .unwrap();
        let h = 1e-5;
        let fd = (r.segment.eval_unchecked(h, 1) - r.segment.eval_unchecked(0.0, 1)) / h;
        let fd2 = (r.segment.eval_unchecked(2.0 * h, 1) - r.segment.eval_unchecked(h, 1)) / h;
        // velocity is quadratic, so fd = a(0) + j·h/2 and fd2 = a(0) + 3j·h/2 exactly
        let est = 1.5 * fd - 0.5 * fd2;
        assert!((est - r.segment.eval(0.0, 2).unwrap()).norm() < 1e-6);
    }

    #[test]
    fn optimal_tau_rest_to_rest() {
        let tau = optimal_tau(&s1(0.0, 0.0), &s1(1.0, 0.0), 1.0).unwrap();
        assert!((tau - 18f64.powf(0.25)).abs() < 1e-12);
        // golden-section cross-check
        let g = golden_section(|t| cost_at(&s1(0.0, 0.0), &s1(1.0, 0.0), t, 1.0), 1e-3, 20.0);
        assert!((g - tau).abs() < 1e-6);
        let c = transition_cost(&s1(0.0, 0.0), &s1(1.0, 0.0), 1.0).unwrap();
        let expected = tau + 6.0 / tau.powi(3);
        assert!((c - expected).abs() < 1e-12);
        assert!((c - 2.7464).abs() < 1e-4);
    }

    #[test]
    fn identity_transition() {
        let x = State::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.5, 0.0, 0.0));
        assert_eq!(optimal_tau(&x, &x, 1.0).unwrap(), 0.0);
        assert_eq!(transition_cost(&x, &x, 1.0).unwrap(), 0.0);
        let r = connect(&x, &x, 1.0).unwrap();
        assert_eq!(r.tau, 0.0);
        assert_eq!(r.segment.duration(), 0.0);
    }

    #[test]
    fn cost_vanishes_as_states_converge() {
        let a = State::at_rest(Vec3::new(1.0, 2.0, 3.0));
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let eps = 10f64.powi(-k);
            let b = State::new(a.p + Vec3::repeat(eps), a.v + Vec3::repeat(eps));
            let c = transition_cost(&a, &b, 1.0).unwrap();
            assert!(c < prev);
            prev = c;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn moving_state_limit_is_positive() {
        // Nonzero velocity: cost(τ) → ρτ + A/τ with A = 6|v|², so the limit is 2√(ρA).
        let a = State::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.5, -0.2, 0.1));
        let limit = 2.0 * (6.0 * a.v.norm_squared()).sqrt();
        let b = State::new(a.p + Vec3::repeat(1e-9), a.v);
        let c = transition_cost(&a, &b, 1.0).unwrap();
        assert!((c - limit).abs() < 1e-6, "{c} vs {limit}");
        assert_eq!(transition_cost(&a, &a, 1.0).unwrap(), 0.0);
    }

    fn random_state(rng: &mut ChaCha8Rng) -> State {
        let p = Vec3::from_fn(|_, _| rng.random_range(-10.0..10.0));
        let dir = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let speed = rng.random_range(0.0..5.0);
        let v = if dir.norm() > 1e-9 { dir.normalize() * speed } else { Vec3::zeros() };
        State::new(p, v)
    }

    #[test]
    fn boundary_exactness() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (a, b) = (random_state(&mut rng), random_state(&mut rng));
            let r = connect(&a, &b, 1.0).unwrap();
            let s0 = r.segment.start_state();
            let s1 = r.segment.end_state();
            let tol = |x: &Vec3| 1e-9 * (1.0 + x.amax());
            assert!((s0.p - a.p).amax() <= tol(&a.p));
            assert!((s0.v - a.v).amax() <= tol(&a.v));
            assert!((s1.p - b.p).amax() <= tol(&b.p));
            assert!((s1.v - b.v).amax() <= tol(&b.v));
        }
    }

    #[test]
    fn time_reversal_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (a, b) = (random_state(&mut rng), random_state(&mut rng));
            let a_rev = State::new(a.p, -a.v);
            let b_rev = State::new(b.p, -b.v);
            let fwd = transition_cost(&a, &b, 1.3).unwrap();
            let bwd = transition_cost(&b_rev, &a_rev, 1.3).unwrap();
            assert!((fwd - bwd).abs() <= 1e-9 * (1.0 + fwd), "{fwd} {bwd}");
        }
    }

    #[test]
    fn optimal_tau_beats_grid_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let (a, b) = (random_state(&mut rng), random_state(&mut rng));
            let rho = [0.1, 1.0, 10.0][rng.random_range(0..3)];
            let best = transition_cost(&a, &b, rho).unwrap();
            let scan = (1..=10_000)
                .map(|k| cost_at(&a, &b, 20.0 * k as f64 / 10_000.0, rho))
                .fold(f64::INFINITY, f64::min);
            assert!(best <= scan + 1e-4, "{best} > {scan}");
        }
    }

    fn slab_grid() -> OccupancyGrid {
        let sc = Scenario {
            bounds: Aabb::new(Vec3::new(-5.0, -5.0, -1.0), Vec3::new(5.0, 5.0, 1.0)),
            obstacles: vec![Obstacle::Box {
                min: Vec3::new(-0.25, -5.0, -1.0),
                max: Vec3::new(0.25, 5.0, 1.0),
            }],
            start: State::at_rest(Vec3::new(-2.0, 0.0, 0.0)),
            goal: State::at_rest(Vec3::new(2.0, 0.0, 0.0)),
            seed: 0,
        };
        OccupancyGrid::build(&sc, 0.1, 0.0).unwrap()
    }

    #[test]
    fn zero_motion_is_feasible() {
        let g = slab_grid();
        let x = State::at_rest(Vec3::new(-2.0, 0.0, 0.0));
        let r = fixed_time_connect(&x, &x, 1.0, 1.0).unwrap();
        assert!(check_connection(&r, &g, &PlannerParams::default()));
    }

    #[test]
    fn aggressive_connection_violates_acceleration() {
        let g = slab_grid();
        let r = fixed_time_connect(
            &State::at_rest(Vec3::new(-3.0, 1.0, 0.0)),
            &State::at_rest(Vec3::new(-2.0, 1.0, 0.0)),
            0.1,
            1.0,
        )
        .unwrap();
        // peak |u| = c2 = 6 Δp / τ² = 600
        let peak = r.segment.max_abs_axis(2)[0];
        assert!((peak - 600.0).abs() < 1e-9);
        assert!(!check_connection(&r, &g, &PlannerParams::default()));
    }

    #[test]
    fn connection_through_slab_is_rejected() {
        let g = slab_grid();
        let a = State::at_rest(Vec3::new(-2.0, 0.0, 0.0));
        let b = State::at_rest(Vec3::new(2.0, 0.0, 0.0));
        let r = fixed_time_connect(&a, &b, 3.0, 1.0).unwrap();
        // dense 1 ms oracle
        let hits = (0..=3000).any(|k| !g.is_free(&r.segment.position(k as f64 * 1e-3)));
        assert!(hits);
        let params = PlannerParams {
            v_max: 100.0,
            a_max: 100.0,
            ..Default::default()
        };
        assert!(!check_connection(&r, &g, &params));
    }

    #[test]
    fn default_near_radius_is_positive() {
        let p = PlannerParams::default();
        assert!(p.effective_near_radius() > 0.0);
        let p = PlannerParams {
            near_radius: Some(3.0),
            ..Default::default()
        };
        assert_eq!(p.effective_near_radius(), 3.0);
    }
}
