//! States, polynomial segments, and piecewise-polynomial trajectories.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots;

pub type Vec3 = Vector3<f64>;

/// Highest supported polynomial degree.
pub const MAX_DEGREE: usize = 7;
const MAX_COEFFS: usize = MAX_DEGREE + 1;

/// Slack accepted on segment-local time queries before reporting a domain error.
const TIME_EPS: f64 = 1e-9;

/// Position and velocity in the flat-output state space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub p: Vec3,
    pub v: Vec3,
}

impl State {
    pub fn new(p: Vec3, v: Vec3) -> Self {
        Self { p, v }
    }

    pub fn at_rest(p: Vec3) -> Self {
        Self { p, v: Vec3::zeros() }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// Position, velocity and acceleration at one instant of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySample {
    pub state: State,
    pub acc: Vec3,
}

/// One polynomial piece, shared degree and duration on all three axes.
///
/// Coefficients are stored in ascending powers: `p(t) = Σ c_i t^i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolySegment {
    coeffs: [[f64; MAX_COEFFS]; 3],
    degree: usize,
    duration: f64,
}

impl PolySegment {
    /// Builds a segment from per-axis ascending coefficient slices.
    pub fn new(x: &[f64], y: &[f64], z: &[f64], duration: f64) -> Result<Self> {
        if x.len() != y.len() || y.len() != z.len() {
            return Err(Error::Parameter(format!(
                "axis coefficient counts differ: {}/{}/{}",
                x.len(),
                y.len(),
                z.len()
            )));
        }
        if x.is_empty() || x.len() > MAX_COEFFS {
            return Err(Error::Parameter(format!(
                "segment needs 1..={MAX_COEFFS} coefficients per axis, got {}",
                x.len()
            )));
        }
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(Error::Parameter(format!("segment duration {duration}")));
        }
        let mut coeffs = [[0.0; MAX_COEFFS]; 3];
        for (dst, src) in coeffs.iter_mut().zip([x, y, z]) {
            if src.iter().any(|c| !c.is_finite()) {
                return Err(Error::Parameter("non-finite coefficient".into()));
            }
            dst[..src.len()].copy_from_slice(src);
        }
        Ok(Self {
            coeffs,
            degree: x.len() - 1,
            duration,
        })
    }

    pub(crate) fn from_raw(coeffs: [[f64; MAX_COEFFS]; 3], degree: usize, duration: f64) -> Self {
        debug_assert!(degree <= MAX_DEGREE);
        Self {
            coeffs,
            degree,
            duration,
        }
    }

    /// Constant-velocity segment starting at `p0`.
    pub fn linear(p0: Vec3, v: Vec3, duration: f64) -> Result<Self> {
        Self::new(&[p0.x, v.x], &[p0.y, v.y], &[p0.z, v.z], duration)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Ascending coefficients of one axis (0 = x, 1 = y, 2 = z).
    pub fn coeffs(&self, axis: usize) -> &[f64] {
        &self.coeffs[axis][..=self.degree]
    }

    /// Ascending coefficients of the `order`-th derivative of one axis.
    pub fn derivative_coeffs(&self, axis: usize, order: usize) -> Vec<f64> {
        let mut c = self.coeffs(axis).to_vec();
        for _ in 0..order {
            if c.len() <= 1 {
                return vec![0.0];
            }
            c = roots::derivative(&c);
        }
        c
    }

    /// Same polynomial represented at a higher degree (zero-padded).
    pub fn elevated(&self, degree: usize) -> Result<Self> {
        if degree < self.degree || degree > MAX_DEGREE {
            return Err(Error::Parameter(format!(
                "cannot represent degree {} at degree {degree}",
                self.degree
            )));
        }
        Ok(Self {
            degree,
            ..*self
        })
    }

    /// Value of the `order`-th derivative at local time `t`.
    pub fn eval(&self, t: f64, order: usize) -> Result<Vec3> {
        if !(t >= -TIME_EPS && t <= self.duration + TIME_EPS) {
            return Err(Error::Domain {
                t,
                duration: self.duration,
            });
        }
        Ok(self.eval_unchecked(t.clamp(0.0, self.duration), order))
    }

    /// Like [`eval`](Self::eval) without the domain check.
    #[inline]
    pub fn eval_unchecked(&self, t: f64, order: usize) -> Vec3 {
        let mut out = Vec3::zeros();
        if order > self.degree {
            return out;
        }
        for axis in 0..3 {
            let c = &self.coeffs[axis];
            let mut acc = 0.0;
            for i in (order..=self.degree).rev() {
                acc = acc * t + c[i] * falling_factorial(i, order);
            }
            out[axis] = acc;
        }
        out
    }

    #[inline]
    pub fn position(&self, t: f64) -> Vec3 {
        self.eval_unchecked(t, 0)
    }

    pub fn state_at(&self, t: f64) -> State {
        State::new(self.eval_unchecked(t, 0), self.eval_unchecked(t, 1))
    }

    pub fn start_state(&self) -> State {
        self.state_at(0.0)
    }

    pub fn end_state(&self) -> State {
        self.state_at(self.duration)
    }

    /// Candidate extrema of the `order`-th derivative on `[0, duration]`.
    ///
    /// For each axis, returns both endpoints plus every interior critical
    /// point as `(t, value)`, sorted by time. The true minimum and maximum of
    /// that derivative over the segment are always among the returned values.
    pub fn axis_extrema(&self, order: usize) -> [Vec<(f64, f64)>; 3] {
        std::array::from_fn(|axis| {
            let f = self.derivative_coeffs(axis, order);
            let df = roots::derivative(&f);
            let tau = self.duration;
            let mut pts = vec![(0.0, roots::eval(&f, 0.0))];
            if tau > 0.0 {
                for t in roots::real_roots_in(&df, 0.0, tau) {
                    if t > 0.0 && t < tau {
                        pts.push((t, roots::eval(&f, t)));
                    }
                }
                pts.push((tau, roots::eval(&f, tau)));
            }
            pts
        })
    }

    /// Largest absolute value of the `order`-th derivative on any one axis.
    pub fn max_abs_axis(&self, order: usize) -> [f64; 3] {
        let ext = self.axis_extrema(order);
        std::array::from_fn(|a| ext[a].iter().fold(0.0_f64, |m, &(_, v)| m.max(v.abs())))
    }
}

#[inline]
fn falling_factorial(i: usize, k: usize) -> f64 {
    ((i - k + 1)..=i).fold(1.0, |acc, x| acc * x as f64)
}

/// Ordered polynomial segments joined with continuous position and velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryFile", into = "TrajectoryFile")]
pub struct Trajectory {
    segments: Vec<PolySegment>,
    starts: Vec<f64>,
    total: f64,
}

/// Tolerance on boundary agreement between adjacent segments.
pub const CONTINUITY_TOL: f64 = 1e-6;

impl Trajectory {
    /// Builds a trajectory, rejecting position or velocity jumps at joints.
    pub fn new(segments: Vec<PolySegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Trajectory("no segments".into()));
        }
        for (i, w) in segments.windows(2).enumerate() {
            let a = w[0].end_state();
            let b = w[1].start_state();
            let gap_p = (a.p - b.p).amax() / (1.0 + a.p.amax());
            let gap_v = (a.v - b.v).amax() / (1.0 + a.v.amax());
            if gap_p > CONTINUITY_TOL || gap_v > CONTINUITY_TOL {
                return Err(Error::Trajectory(format!(
                    "discontinuity at joint {i}: |dp|={gap_p:e}, |dv|={gap_v:e}"
                )));
            }
        }
        let mut starts = Vec::with_capacity(segments.len());
        let mut total = 0.0;
        for s in &segments {
            starts.push(total);
            total += s.duration();
        }
        Ok(Self {
            segments,
            starts,
            total,
        })
    }

    pub fn segments(&self) -> &[PolySegment] {
        &self.segments
    }

    pub fn durations(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.duration()).collect()
    }

    pub fn total_duration(&self) -> f64 {
        self.total
    }

    /// Segment index owning global time `t` and the local time inside it.
    /// A time exactly on a joint belongs to the later segment.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !(t >= -TIME_EPS && t <= self.total + TIME_EPS) {
            return Err(Error::Domain {
                t,
                duration: self.total,
            });
        }
        let t = t.clamp(0.0, self.total);
        let idx = self.starts.partition_point(|&s| s <= t).saturating_sub(1);
        // Skip zero-length segments sitting at the same start time.
        let mut idx = idx;
        while idx + 1 < self.segments.len() && self.starts[idx + 1] <= t {
            idx += 1;
        }
        let local = (t - self.starts[idx]).clamp(0.0, self.segments[idx].duration());
        Ok((idx, local))
    }

    /// Position, velocity and acceleration at global time `t`.
    pub fn sample(&self, t: f64) -> Result<TrajectorySample> {
        let (i, local) = self.locate(t)?;
        let seg = &self.segments[i];
        Ok(TrajectorySample {
            state: seg.state_at(local),
            acc: seg.eval_unchecked(local, 2),
        })
    }

    pub fn start_state(&self) -> State {
        self.segments[0].start_state()
    }

    pub fn end_state(&self) -> State {
        self.segments[self.segments.len() - 1].end_state()
    }
}

#[derive(Serialize, Deserialize)]
struct SegmentFile {
    duration: f64,
    coeffs_x: Vec<f64>,
    coeffs_y: Vec<f64>,
    coeffs_z: Vec<f64>,
}

/// On-disk trajectory layout: ascending powers, SI units.
#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    segments: Vec<SegmentFile>,
}

impl TryFrom<TrajectoryFile> for Trajectory {
    type Error = Error;

    fn try_from(file: TrajectoryFile) -> Result<Self> {
        let segs = file
            .segments
            .iter()
            .map(|s| PolySegment::new(&s.coeffs_x, &s.coeffs_y, &s.coeffs_z, s.duration))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(segs)
    }
}

impl From<Trajectory> for TrajectoryFile {
    fn from(t: Trajectory) -> Self {
        TrajectoryFile {
            segments: t
                .segments
                .iter()
                .map(|s| SegmentFile {
                    duration: s.duration(),
                    coeffs_x: s.coeffs(0).to_vec(),
                    coeffs_y: s.coeffs(1).to_vec(),
                    coeffs_z: s.coeffs(2).to_vec(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cubic_1d(c: [f64; 4], tau: f64) -> PolySegment {
        PolySegment::new(&c, &[0.0; 4], &[0.0; 4], tau).unwrap()
    }

    #[test]
    fn constant_segment_has_zero_velocity() {
        let s = PolySegment::new(&[1.0], &[2.0], &[3.0], 4.0).unwrap();
        assert_eq!(s.eval(1.3, 1).unwrap(), Vec3::zeros());
        assert_eq!(s.eval(1.3, 0).unwrap(), Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn cubic_second_derivative() {
        let s = cubic_1d([0.0, 0.0, 0.0, 1.0], 3.0);
        assert_eq!(s.eval(2.0, 2).unwrap().x, 12.0);
        assert_eq!(s.eval(2.0, 3).unwrap().x, 6.0);
        assert_eq!(s.eval(2.0, 4).unwrap().x, 0.0);
    }

    #[test]
    fn eval_outside_domain_is_an_error() {
        let s = cubic_1d([0.0, 0.0, 0.0, 1.0], 1.0);
        assert!(matches!(s.eval(1.5, 0), Err(Error::Domain { .. })));
        assert!(matches!(s.eval(-0.1, 0), Err(Error::Domain { .. })));
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(PolySegment::new(&[0.0; 9], &[0.0; 9], &[0.0; 9], 1.0).is_err());
        assert!(PolySegment::new(&[], &[], &[], 1.0).is_err());
        assert!(PolySegment::new(&[0.0], &[0.0], &[0.0], -1.0).is_err());
    }

    #[test]
    fn linear_velocity_extrema_only_at_endpoints() {
        // p = t^2 -> v = 2t, monotone
        let s = cubic_1d([0.0, 0.0, 1.0, 0.0], 2.0);
        let ext = s.axis_extrema(1);
        let ts: Vec<f64> = ext[0].iter().map(|e| e.0).collect();
        assert_eq!(ts, vec![0.0, 2.0]);
    }

    #[test]
    fn cubic_velocity_extrema_oracle() {
        // p = t^3 - 3t^2 on [0, 2]: v = 3t^2 - 6t, minimum -3 at t = 1
        let s = cubic_1d([0.0, 0.0, -3.0, 1.0], 2.0);
        let ext = &s.axis_extrema(1)[0];
        assert_eq!(ext.len(), 3);
        assert!((ext[0].0 - 0.0).abs() < 1e-12 && ext[0].1.abs() < 1e-12);
        assert!((ext[1].0 - 1.0).abs() < 1e-12 && (ext[1].1 + 3.0).abs() < 1e-12);
        assert!((ext[2].0 - 2.0).abs() < 1e-12 && ext[2].1.abs() < 1e-12);
        // dense 1e-4 grid scan
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..=20000 {
            let v = s.eval(k as f64 * 1e-4, 1).unwrap().x;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let emin = ext.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        let emax = ext.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        assert!((emin - lo).abs() < 1e-9 && (emax - hi).abs() < 1e-9);
    }

    #[test]
    fn cubic_acceleration_extrema_are_endpoints() {
        let s = cubic_1d([1.0, 2.0, -3.0, 0.7], 1.7);
        let ext = &s.axis_extrema(2)[0];
        assert_eq!(ext.len(), 2);
        assert_eq!(ext[0].0, 0.0);
        assert_eq!(ext[1].0, 1.7);
    }

    fn two_piece() -> Trajectory {
        let a = PolySegment::new(&[0.0, 1.0, 0.5], &[0.0; 3], &[1.0, 0.0, 0.0], 2.0).unwrap();
        let e = a.end_state();
        let b = PolySegment::new(
            &[e.p.x, e.v.x, -0.25],
            &[e.p.y, e.v.y, 0.0],
            &[e.p.z, e.v.z, 0.0],
            1.5,
        )
        .unwrap();
        Trajectory::new(vec![a, b]).unwrap()
    }

    #[test]
    fn trajectory_state_endpoints_and_joint() {
        let tr = two_piece();
        assert_eq!(tr.total_duration(), 3.5);
        assert_eq!(tr.sample(0.0).unwrap().state, tr.segments()[0].start_state());
        let end = tr.sample(3.5).unwrap().state;
        assert!((end.p - tr.segments()[1].end_state().p).norm() < 1e-12);
        // joint belongs to later segment; both sides agree on position
        let (i, local) = tr.locate(2.0).unwrap();
        assert_eq!((i, local), (1, 0.0));
        let left = tr.segments()[0].position(2.0);
        let right = tr.sample(2.0).unwrap().state.p;
        assert!((left - right).norm() < 1e-6);
        // acceleration jumps at the joint
        assert_eq!(tr.sample(2.0).unwrap().acc.x, -0.5);
        assert!(tr.sample(3.6).is_err());
    }

    #[test]
    fn trajectory_rejects_position_jump() {
        let a = PolySegment::new(&[0.0, 1.0], &[0.0; 2], &[0.0; 2], 1.0).unwrap();
        let b = PolySegment::new(&[5.0, 1.0], &[0.0; 2], &[0.0; 2], 1.0).unwrap();
        assert!(Trajectory::new(vec![a, b]).is_err());
    }

    #[test]
    fn trajectory_json_layout() {
        let tr = two_piece();
        let json = serde_json::to_value(&tr).unwrap();
        assert_eq!(json["segments"][0]["duration"], 2.0);
        assert_eq!(json["segments"][0]["coeffs_x"], serde_json::json!([0.0, 1.0, 0.5]));
        let back: Trajectory = serde_json::from_value(json).unwrap();
        assert_eq!(back, tr);
    }

    fn arb_segment(max_deg: usize) -> impl Strategy<Value = PolySegment> {
        (1..=max_deg, 0.1f64..3.0).prop_flat_map(|(deg, tau)| {
            let axis = prop::collection::vec(-5.0f64..5.0, deg + 1);
            (axis.clone(), axis.clone(), axis, Just(tau))
                .prop_map(|(x, y, z, tau)| PolySegment::new(&x, &y, &z, tau).unwrap())
        })
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(seg in arb_segment(7), u in 0.05f64..0.95, k in 1usize..4) {
            let t = u * seg.duration();
            let h = 1e-5;
            let fd = (seg.eval_unchecked(t + h, k - 1) - seg.eval_unchecked(t - h, k - 1)) / (2.0 * h);
            let exact = seg.eval_unchecked(t, k);
            for a in 0..3 {
                let scale = 1.0 + exact[a].abs() + seg.eval_unchecked(t, k - 1)[a].abs();
                prop_assert!((fd[a] - exact[a]).abs() <= 1e-5 * scale,
                    "axis {a} order {k}: fd {} vs {}", fd[a], exact[a]);
            }
        }

        #[test]
        fn extrema_bound_dense_scan(seg in arb_segment(5), order in 0usize..3) {
            let ext = seg.axis_extrema(order);
            for a in 0..3 {
                let emax = ext[a].iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
                let emin = ext[a].iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
                for k in 0..=400 {
                    let v = seg.eval_unchecked(seg.duration() * k as f64 / 400.0, order)[a];
                    prop_assert!(v <= emax + 1e-6 * (1.0 + emax.abs()));
                    prop_assert!(v >= emin - 1e-6 * (1.0 + emin.abs()));
                }
            }
        }
    }

    #[test]
    fn extrema_superset_ten_thousand_segments() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let deg = rng.random_range(1..=5);
            let tau = rng.random_range(0.1..3.0);
            let c: Vec<f64> = (0..=deg).map(|_| rng.random_range(-5.0..5.0)).collect();
            let s = PolySegment::new(&c, &c, &c, tau).unwrap();
            let emax = s.axis_extrema(1)[0]
                .iter()
                .map(|e| e.1)
                .fold(f64::NEG_INFINITY, f64::max);
            for k in 0..=200 {
                let v = s.eval_unchecked(tau * k as f64 / 200.0, 1).x;
                assert!(v <= emax + 1e-6 * (1.0 + emax.abs()));
            }
        }
    }
}
