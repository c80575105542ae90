//! Smoothness and size measures of a trajectory.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::state::{PolySegment, Trajectory};

/// Quadrature nodes per segment for arc length.
pub const LENGTH_NODES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    /// `½ Σ∫‖a‖² dt`.
    pub control_cost: f64,
    /// `Σ∫‖j‖² dt`.
    pub jerk_integral: f64,
    pub duration: f64,
    pub length: f64,
    pub segments: usize,
}

impl TrajectoryMetrics {
    pub fn of(traj: &Trajectory) -> Self {
        let segs = traj.segments();
        Self {
            control_cost: 0.5 * segs.iter().map(|s| squared_derivative_integral(s, 2)).sum::<f64>(),
            jerk_integral: segs.iter().map(|s| squared_derivative_integral(s, 3)).sum(),
            duration: traj.total_duration(),
            length: segs.iter().map(segment_length).sum(),
            segments: segs.len(),
        }
    }
}

pub fn compute_metrics(traj: &Trajectory) -> TrajectoryMetrics {
    TrajectoryMetrics::of(traj)
}

/// `∫₀^τ ‖p⁽ᵏ⁾(t)‖² dt`, exact.
pub fn squared_derivative_integral(seg: &PolySegment, order: usize) -> f64 {
    let tau = seg.duration();
    (0..3)
        .map(|axis| {
            let d = seg.derivative_coeffs(axis, order);
            let mut total = 0.0;
            for (i, a) in d.iter().enumerate() {
                for (j, b) in d.iter().enumerate() {
                    let k = (i + j + 1) as i32;
                    total += a * b * tau.powi(k) / k as f64;
                }
            }
            total
        })
        .sum()
}

/// Arc length by Gauss-Legendre quadrature of the speed.
pub fn segment_length(seg: &PolySegment) -> f64 {
    let tau = seg.duration();
    if tau == 0.0 {
        return 0.0;
    }
    let (nodes, weights) = gauss_legendre();
    let half = 0.5 * tau;
    nodes
        .iter()
        .zip(weights)
        .map(|(x, w)| w * seg.eval_unchecked(half * (x + 1.0), 1).norm())
        .sum::<f64>()
        * half
}

fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(LENGTH_NODES))
}

/// Nodes and weights on [-1, 1], by Newton iteration on `P_n`.
pub fn legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            dp = nf * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvp;
    use crate::state::{State, Vec3};

    fn traj(segs: Vec<PolySegment>) -> Trajectory {
        Trajectory::new(segs).unwrap()
    }

    #[test]
    fn zero_motion() {
        let s = PolySegment::linear(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), 2.0).unwrap();
        let m = TrajectoryMetrics::of(&traj(vec![s]));
        assert_eq!(m.control_cost, 0.0);
        assert_eq!(m.jerk_integral, 0.0);
        assert_eq!(m.length, 0.0);
        assert_eq!(m.duration, 2.0);
    }

    #[test]
    fn rest_to_rest_control_cost() {
        let seg = bvp::fixed_time_connect(
            &State::at_rest(Vec3::zeros()),
            &State::at_rest(Vec3::new(1.0, 0.0, 0.0)),
            1.0,
            1.0,
        )
        .unwrap()
        .segment;
        let m = TrajectoryMetrics::of(&traj(vec![seg]));
        // Simpson on u(t) = 6 - 12t
        let n = 1000;
        let h = 1.0 / n as f64;
        let f = |t: f64| (6.0 - 12.0 * t).powi(2);
        let simpson: f64 = (0..n)
            .map(|k| {
                let a = k as f64 * h;
                h / 6.0 * (f(a) + 4.0 * f(a + h / 2.0) + f(a + h))
            })
            .sum();
        assert!((simpson - 12.0).abs() < 1e-9);
        assert!((m.control_cost - 6.0).abs() < 1e-12);
        // jerk is constant -12
        assert!((m.jerk_integral - 144.0).abs() < 1e-9);
    }

    #[test]
    fn straight_line_length() {
        let s = PolySegment::linear(Vec3::zeros(), Vec3::new(3.0, 4.0, 0.0), 1.0).unwrap();
        let m = TrajectoryMetrics::of(&traj(vec![s]));
        assert!((m.length - 5.0).abs() < 1e-9);
    }

    #[test]
    fn curved_length_matches_polyline() {
        let seg = bvp::connect(
            &State::new(Vec3::zeros(), Vec3::new(0.0, 2.0, 0.0)),
            &State::new(Vec3::new(3.0, 1.0, 0.5), Vec3::new(1.0, 0.0, 0.0)),
            1.0,
        )
        .unwrap()
        .segment;
        let n = 200_000;
        let mut poly = 0.0;
        let mut prev = seg.position(0.0);
        for k in 1..=n {
            let p = seg.position(seg.duration() * k as f64 / n as f64);
            poly += (p - prev).norm();
            prev = p;
        }
        assert!((segment_length(&seg) - poly).abs() < 1e-8, "{} {}", segment_length(&seg), poly);
    }

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = legendre_rule(LENGTH_NODES);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        // exact for degree <= 63
        for deg in [0, 2, 10, 40, 62] {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = 2.0 / (deg as f64 + 1.0);
            assert!((q - exact).abs() < 1e-12, "{deg}");
        }
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }
}
