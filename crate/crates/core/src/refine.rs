//! Back-end refinement of a front-end trajectory.
//!
//! Each segment becomes a quintic with the same duration. Positions and
//! velocities are shared at the joints, while accelerations get one value per
//! side. The objective is
//!
//! ```text
//! J = λs Σ∫(p⁽³⁾)² + λh Σ∫(p − p*)² + λc Σ (a⁻ − a⁺)²
//! ```
//!
//! per axis, with `p*` the front-end trajectory. With boundary derivatives
//! `d = [d_f; d_p]` and coefficients `c = K d`, J is a quadratic in the free
//! part `d_p` and is minimized by one linear solve. The matrix of that solve
//! is the same for all three axes.
//!
//! [`refine`] walks a schedule of weights and keeps the last iterate that
//! passes the feasibility check and the acceleration-gap and jerk budgets.
//!
//! Canonical order of `d` per axis: `d_f = (p, v, a at start, p, v, a at end)`
//! followed by `(p, v, a⁻, a⁺)` for each interior joint in path order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bvp::{self, PlannerParams};
use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;
use crate::metrics::TrajectoryMetrics;
use crate::state::{PolySegment, Trajectory};

/// Polynomial degree of refined segments.
pub const DEGREE: usize = 5;
/// Derivative order of the smoothness term (jerk).
pub const SMOOTH_ORDER: usize = 3;
/// Largest accepted condition number of the scaled reduced system.
pub const CONDITION_LIMIT: f64 = 1e12;

const NC: usize = DEGREE + 1;
const FIXED: usize = 6;
const PER_JOINT: usize = 4;

fn falling(i: usize, k: usize) -> f64 {
    if k > i {
        return 0.0;
    }
    ((i - k + 1)..=i).fold(1.0, |acc, x| acc * x as f64)
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Parameter("no segments".into()));
    }
    if let Some(t) = times.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(Error::Parameter(format!("segment duration {t}")));
    }
    Ok(())
}

/// Block-diagonal `∫ b⁽ʲ⁾ b⁽ʲ⁾ᵀ dt` for the monomial basis `b` of degree `n`.
pub fn build_qs(times: &[f64], n: usize, j: usize) -> DMatrix<f64> {
    let nc = n + 1;
    let mut q = DMatrix::zeros(nc * times.len(), nc * times.len());
    for (s, &t) in times.iter().enumerate() {
        for a in j..nc {
            for b in j..nc {
                let e = (a + b + 1 - 2 * j) as i32;
                q[(s * nc + a, s * nc + b)] = falling(a, j) * falling(b, j) * t.powi(e) / e as f64;
            }
        }
    }
    q
}

/// Block-diagonal Gram matrix `∫ b bᵀ dt`.
pub fn build_qh(times: &[f64], n: usize) -> DMatrix<f64> {
    build_qs(times, n, 0)
}

/// Quadratic form of the summed squared acceleration jumps at the joints.
pub fn build_qc(times: &[f64], n: usize) -> DMatrix<f64> {
    let nc = n + 1;
    let mut q = DMatrix::zeros(nc * times.len(), nc * times.len());
    for (s, &t) in times.iter().enumerate().take(times.len().saturating_sub(1)) {
        let mut g = DVector::zeros(nc * times.len());
        for k in 2..nc {
            g[s * nc + k] = falling(k, 2) * t.powi(k as i32 - 2);
        }
        if nc > 2 {
            g[(s + 1) * nc + 2] -= 2.0;
        }
        q += &g * g.transpose();
    }
    q
}

/// Endpoint derivatives `(p, v, a at 0, p, v, a at t)` of a quintic from its
/// ascending coefficients.
pub fn endpoint_map(t: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(6, NC);
    for d in 0..3 {
        a[(d, d)] = falling(d, d);
        for k in d..NC {
            a[(3 + d, k)] = falling(k, d) * t.powi((k - d) as i32);
        }
    }
    a
}

/// Inverse of [`endpoint_map`], in closed form.
fn endpoint_inverse(t: f64) -> DMatrix<f64> {
    let (t2, t3, t4, t5) = (t * t, t.powi(3), t.powi(4), t.powi(5));
    // Columns: p0, v0, a0, p1, v1, a1.
    #[rustfmt::skip]
    let rows = [
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.5, 0.0, 0.0, 0.0],
        [-20.0 / (2.0 * t3), -12.0 / (2.0 * t2), -3.0 / (2.0 * t), 20.0 / (2.0 * t3), -8.0 / (2.0 * t2), 1.0 / (2.0 * t)],
        [30.0 / (2.0 * t4), 16.0 / (2.0 * t3), 3.0 / (2.0 * t2), -30.0 / (2.0 * t4), 14.0 / (2.0 * t3), -2.0 / (2.0 * t2)],
        [-12.0 / (2.0 * t5), -6.0 / (2.0 * t4), -1.0 / (2.0 * t3), 12.0 / (2.0 * t5), -6.0 / (2.0 * t4), 1.0 / (2.0 * t3)],
    ];
    DMatrix::from_fn(6, 6, |r, c| rows[r][c])
}

/// Number of entries of `d` per axis for `m` segments.
pub fn derivative_dim(m: usize) -> usize {
    FIXED + PER_JOINT * (m - 1)
}

/// Index in `d` of each of a segment's six endpoint derivatives.
fn slots(seg: usize, m: usize) -> [usize; 6] {
    let joint = |k: usize| FIXED + PER_JOINT * k;
    let (p0, v0, a0) = if seg == 0 {
        (0, 1, 2)
    } else {
        let j = joint(seg - 1);
        (j, j + 1, j + 3)
    };
    let (p1, v1, a1) = if seg == m - 1 {
        (3, 4, 5)
    } else {
        let j = joint(seg);
        (j, j + 1, j + 2)
    };
    [p0, v0, a0, p1, v1, a1]
}

/// `K` with `c = K d` for quintic segments of the given durations.
pub fn mapping_matrix(times: &[f64]) -> Result<DMatrix<f64>> {
    check_times(times)?;
    let m = times.len();
    let mut k = DMatrix::zeros(NC * m, derivative_dim(m));
    for (s, &t) in times.iter().enumerate() {
        let inv = endpoint_inverse(t);
        for (col, &slot) in slots(s, m).iter().enumerate() {
            for row in 0..NC {
                k[(s * NC + row, slot)] += inv[(row, col)];
            }
        }
    }
    Ok(k)
}

/// Objective weights; they sum to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub smooth: f64,
    pub homotopy: f64,
    pub continuity: f64,
}

impl Weights {
    /// From `r_c = λc / Σλ` and `r_h = λh / (λs + λh)`.
    pub fn from_ratios(r_c: f64, r_h: f64) -> Self {
        Self {
            smooth: (1.0 - r_h) * (1.0 - r_c),
            homotopy: r_h * (1.0 - r_c),
            continuity: r_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.smooth, self.homotopy, self.continuity];
        if w.iter().any(|x| !(*x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("weights {w:?}")));
        }
        Ok(())
    }
}

/// Fixed data of a refinement: durations, mapping and original coefficients.
#[derive(Clone, Debug)]
pub struct RefineProblem {
    original: Trajectory,
    times: Vec<f64>,
    k: DMatrix<f64>,
    ks: DMatrix<f64>,
    kh: DMatrix<f64>,
    kc: DMatrix<f64>,
    /// `Kᵀ Qh c*`, one column per axis.
    z: DMatrix<f64>,
    /// `c*ᵀ Qh c*` per axis.
    hh: [f64; 3],
    /// Fixed derivatives, one column per axis.
    d_f: DMatrix<f64>,
}

/// Result of one closed-form solve.
#[derive(Clone, Debug)]
pub struct Solution {
    /// Free derivatives, one column per axis.
    pub d_p: DMatrix<f64>,
    pub trajectory: Trajectory,
}

impl RefineProblem {
    pub fn new(original: &Trajectory) -> Result<Self> {
        let times = original.durations();
        check_times(&times)?;
        let segs = original.segments();
        if let Some(s) = segs.iter().find(|s| s.degree() > DEGREE) {
            return Err(Error::Parameter(format!("segment degree {} above {DEGREE}", s.degree())));
        }
        let m = times.len();
        let k = mapping_matrix(&times)?;
        let kt = k.transpose();
        let qh = build_qh(&times, DEGREE);
        let ks = &kt * build_qs(&times, DEGREE, SMOOTH_ORDER) * &k;
        let kh = &kt * &qh * &k;
        let kc = &kt * build_qc(&times, DEGREE) * &k;

        let c_star = DMatrix::from_fn(NC * m, 3, |r, axis| {
            let c = segs[r / NC].coeffs(axis);
            c.get(r % NC).copied().unwrap_or(0.0)
        });
        let qc_star = &qh * &c_star;
        let z = &kt * &qc_star;
        let hh = std::array::from_fn(|a| c_star.column(a).dot(&qc_star.column(a)));

        let first = &segs[0];
        let last = &segs[m - 1];
        let t_end = last.duration();
        let d_f = DMatrix::from_fn(FIXED, 3, |r, axis| {
            let (seg, t) = if r < 3 { (first, 0.0) } else { (last, t_end) };
            seg.eval_unchecked(t, r % 3)[axis]
        });
        Ok(Self {
            original: original.clone(),
            times,
            k,
            ks,
            kh,
            kc,
            z,
            hh,
            d_f,
        })
    }

    pub fn original(&self) -> &Trajectory {
        &self.original
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn mapping(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// Number of free derivatives per axis.
    pub fn free_dim(&self) -> usize {
        self.k.ncols() - FIXED
    }

    pub fn fixed(&self) -> &DMatrix<f64> {
        &self.d_f
    }

    /// `R = Kᵀ(λs Qs + λh Qh + λc Qc)K`.
    pub fn reduced_matrix(&self, w: &Weights) -> DMatrix<f64> {
        &self.ks * w.smooth + &self.kh * w.homotopy + &self.kc * w.continuity
    }

    fn full_d(&self, d_p: &DVector<f64>, axis: usize) -> DVector<f64> {
        let mut d = DVector::zeros(self.k.ncols());
        d.rows_mut(0, FIXED).copy_from(&self.d_f.column(axis));
        d.rows_mut(FIXED, d_p.len()).copy_from(d_p);
        d
    }

    /// Objective value for one axis.
    pub fn objective(&self, w: &Weights, axis: usize, d_p: &DVector<f64>) -> f64 {
        let d = self.full_d(d_p, axis);
        let r = self.reduced_matrix(w);
        (d.transpose() * &r * &d)[(0, 0)] - 2.0 * w.homotopy * d.dot(&self.z.column(axis)) + w.homotopy * self.hh[axis]
    }

    /// Gradient of [`RefineProblem::objective`] with respect to `d_p`.
    pub fn gradient(&self, w: &Weights, axis: usize, d_p: &DVector<f64>) -> DVector<f64> {
        let r = self.reduced_matrix(w);
        let n = self.free_dim();
        let r_pp = r.view((FIXED, FIXED), (n, n));
        let r_pf = r.view((FIXED, 0), (n, FIXED));
        let z_p = self.z.view((FIXED, axis), (n, 1));
        (r_pf * self.d_f.column(axis) + r_pp * d_p - z_p * w.homotopy) * 2.0
    }

    /// Minimizer of the objective for all three axes at once.
    pub fn solve(&self, w: &Weights) -> Result<Solution> {
        self.solve_columns(w, &[0, 1, 2])
    }

    /// Minimizer for a single axis.
    pub fn solve_axis(&self, w: &Weights, axis: usize) -> Result<DVector<f64>> {
        Ok(self.solve_columns(w, &[axis])?.d_p.column(0).into_owned())
    }

    fn solve_columns(&self, w: &Weights, axes: &[usize]) -> Result<Solution> {
        w.validate()?;
        let n = self.free_dim();
        let mut d_p = DMatrix::zeros(n, axes.len());
        if n > 0 {
            let r = self.reduced_matrix(w);
            let r_pp = r.view((FIXED, FIXED), (n, n)).into_owned();
            let r_pf = r.view((FIXED, 0), (n, FIXED));
            let mut rhs = DMatrix::zeros(n, axes.len());
            for (col, &axis) in axes.iter().enumerate() {
                let z_p = self.z.view((FIXED, axis), (n, 1));
                let b = z_p * w.homotopy - r_pf * self.d_f.column(axis);
                rhs.set_column(col, &b.column(0));
            }
            // Jacobi scaling before factorizing.
            let diag = r_pp.diagonal();
            if diag.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::Singular("reduced matrix has a non-positive diagonal".into()));
            }
            let s = diag.map(|x| 1.0 / x.sqrt());
            let scaled = DMatrix::from_fn(n, n, |i, j| r_pp[(i, j)] * s[i] * s[j]);
            let eig = scaled.clone().symmetric_eigenvalues();
            let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
            if !(lo > 0.0) || hi / lo > CONDITION_LIMIT {
                return Err(Error::Singular(format!("condition estimate {:e}", hi / lo)));
            }
            let chol = scaled
                .cholesky()
                .ok_or_else(|| Error::Singular("Cholesky factorization failed".into()))?;
            for col in 0..axes.len() {
                let b = rhs.column(col).component_mul(&s);
                let y = chol.solve(&b).component_mul(&s);
                d_p.set_column(col, &y);
            }
        }
        let trajectory = if axes.len() == 3 {
            self.assemble(&d_p)?
        } else {
            self.original.clone()
        };
        Ok(Solution { d_p, trajectory })
    }

    /// Coefficients `c = K [d_f; d_p]` of one axis.
    pub fn coefficients(&self, axis: usize, d_p: &DVector<f64>) -> DVector<f64> {
        &self.k * self.full_d(d_p, axis)
    }

    /// Quintic trajectory from free derivatives (one column per axis).
    pub fn assemble(&self, d_p: &DMatrix<f64>) -> Result<Trajectory> {
        let cols: Vec<DVector<f64>> = (0..3)
            .map(|a| self.coefficients(a, &d_p.column(a).into_owned()))
            .collect();
        let segs = self
            .times
            .iter()
            .enumerate()
            .map(|(s, &t)| {
                let axis = |a: usize| -> Vec<f64> { (0..NC).map(|k| cols[a][s * NC + k]).collect() };
                PolySegment::new(&axis(0), &axis(1), &axis(2), t)
            })
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(segs)
    }
}

/// Free-function form of [`RefineProblem::solve`].
pub fn closed_form_solve(problem: &RefineProblem, weights: &Weights) -> Result<Trajectory> {
    Ok(problem.solve(weights)?.trajectory)
}

/// Velocity, acceleration and collision check of every segment.
pub fn check_feasible(traj: &Trajectory, grid: &OccupancyGrid, params: &PlannerParams) -> bool {
    traj.segments()
        .iter()
        .all(|s| bvp::segment_feasible(s, grid, params.v_max, params.a_max))
}

/// `Σ‖a⁻ − a⁺‖²` over the joints.
pub fn acceleration_gap(traj: &Trajectory) -> f64 {
    traj.segments()
        .windows(2)
        .map(|w| (w[0].eval_unchecked(w[0].duration(), 2) - w[1].eval_unchecked(0.0, 2)).norm_squared())
        .sum()
}

/// Largest position difference between two trajectories with equal durations,
/// sampled at `per_segment` points per segment.
pub fn max_deviation(a: &Trajectory, b: &Trajectory, per_segment: usize) -> f64 {
    a.segments()
        .iter()
        .zip(b.segments())
        .map(|(x, y)| {
            let t = x.duration();
            (0..=per_segment)
                .map(|k| {
                    let s = t * k as f64 / per_segment as f64;
                    (x.position(s) - y.position(s)).norm()
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Weight schedule of the two refinement loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    pub r_c_init: f64,
    pub r_h_init: f64,
    pub d_rc: f64,
    pub d_rh: f64,
    /// An iterate is accepted only if its acceleration gap is at most this
    /// fraction of the input's. `None` accepts any feasible iterate.
    pub max_gap_ratio: Option<f64>,
    /// An iterate is accepted only if its jerk integral is at most this
    /// multiple of the input's. `None` disables the check.
    pub max_jerk_ratio: Option<f64>,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            r_c_init: 0.99,
            r_h_init: 0.99,
            d_rc: 0.02,
            d_rh: 0.05,
            max_gap_ratio: Some(0.5),
            max_jerk_ratio: Some(1.0),
        }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_c_init", self.r_c_init),
            ("r_h_init", self.r_h_init),
            ("d_rc", self.d_rc),
            ("d_rh", self.d_rh),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Parameter(format!("{name} = {v}")));
            }
        }
        for (name, v) in [("max_gap_ratio", self.max_gap_ratio), ("max_jerk_ratio", self.max_jerk_ratio)] {
            if let Some(g) = v {
                if !(g >= 0.0) {
                    return Err(Error::Parameter(format!("{name} = {g}")));
                }
            }
        }
        Ok(())
    }
}

/// One solve of the schedule.
#[derive(Clone, Debug)]
pub struct RefineIterate {
    /// 1 while lowering `r_c`, 2 while lowering `r_h`.
    pub stage: u8,
    pub r_c: f64,
    pub r_h: f64,
    pub feasible: bool,
    /// Acceleration gap within the schedule's budget.
    pub gap_ok: bool,
    /// Jerk integral within the schedule's budget.
    pub jerk_ok: bool,
    /// `None` when the solve itself failed.
    pub trajectory: Option<Trajectory>,
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    /// Last accepted iterate, or the input when none was accepted.
    pub trajectory: Trajectory,
    pub iterates: Vec<RefineIterate>,
    /// Accepted iterates of the first loop.
    pub stage1_feasible: usize,
    pub stage2_feasible: usize,
}

impl RefineOutcome {
    pub fn improved(&self) -> bool {
        self.stage1_feasible + self.stage2_feasible > 0
    }
}

/// Runs both loops and returns the last accepted trajectory.
///
/// An iterate is accepted when it passes [`check_feasible`] and stays within
/// the schedule's gap and jerk budgets. The first infeasible iterate ends a
/// loop; iterates that only miss a budget are skipped.
pub fn refine(
    initial: &Trajectory,
    grid: &OccupancyGrid,
    params: &PlannerParams,
    schedule: &ScheduleParams,
) -> Result<RefineOutcome> {
    schedule.validate()?;
    if !check_feasible(initial, grid, params) {
        return Err(Error::Precondition("initial trajectory is infeasible".into()));
    }
    let problem = RefineProblem::new(initial)?;
    let gap_budget = schedule.max_gap_ratio.map(|g| g * acceleration_gap(initial));
    let jerk_budget = schedule
        .max_jerk_ratio
        .map(|r| r * TrajectoryMetrics::of(initial).jerk_integral);
    let mut best = initial.clone();
    let mut iterates = Vec::new();

    let within = |value: f64, budget: Option<f64>| budget.is_none_or(|b| value <= b);
    // Err ends the loop, Ok(None) skips the iterate.
    let attempt = |stage: u8, r_c: f64, r_h: f64, iterates: &mut Vec<RefineIterate>| -> std::result::Result<Option<Trajectory>, ()> {
        let sol = problem.solve(&Weights::from_ratios(r_c, r_h)).ok();
        let traj = sol.map(|s| s.trajectory);
        let feasible = traj.as_ref().is_some_and(|t| check_feasible(t, grid, params));
        let gap_ok = traj.as_ref().is_some_and(|t| within(acceleration_gap(t), gap_budget));
        let jerk_ok = traj
            .as_ref()
            .is_some_and(|t| within(TrajectoryMetrics::of(t).jerk_integral, jerk_budget));
        iterates.push(RefineIterate {
            stage,
            r_c,
            r_h,
            feasible,
            gap_ok,
            jerk_ok,
            trajectory: traj.clone(),
        });
        if !feasible {
            return Err(());
        }
        Ok(traj.filter(|_| gap_ok && jerk_ok))
    };

    // Ratios are recomputed from the step count to avoid accumulating round-off.
    const RATIO_EPS: f64 = 1e-12;
    let mut r_c_kept = schedule.r_c_init;
    let mut stage1 = 0;
    for k in 0.. {
        let r_c = schedule.r_c_init - k as f64 * schedule.d_rc;
        if r_c <= RATIO_EPS {
            break;
        }
        match attempt(1, r_c, schedule.r_h_init, &mut iterates) {
            Ok(accepted) => {
                r_c_kept = r_c;
                if let Some(t) = accepted {
                    best = t;
                    stage1 += 1;
                }
            }
            Err(()) => break,
        }
    }
    let mut stage2 = 0;
    for k in 1.. {
        let r_h = schedule.r_h_init - k as f64 * schedule.d_rh;
        if r_h <= RATIO_EPS {
            break;
        }
        match attempt(2, r_c_kept, r_h, &mut iterates) {
            Ok(Some(t)) => {
                best = t;
                stage2 += 1;
            }
            Ok(None) => {}
            Err(()) => break,
        }
    }
    Ok(RefineOutcome {
        trajectory: best,
        iterates,
        stage1_feasible: stage1,
        stage2_feasible: stage2,
    })
}
