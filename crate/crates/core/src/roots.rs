//! Real roots of low-degree polynomials.
//!
//! Closed forms up to degree four (Ferrari for the quartic), each root polished
//! with Newton steps on the original polynomial. Higher degrees fall back to
//! sign-change bracketing plus bisection on a caller-supplied interval.
//!
//! Coefficients passed to [`real_roots_in`] and [`eval`] are in ascending
//! powers, matching [`crate::state::PolySegment`].

/// Evaluates `Σ c_i t^i` by Horner's rule.
#[inline]
pub fn eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Coefficients of the derivative, ascending powers.
pub fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &c)| i as f64 * c)
        .collect()
}

/// Real roots of `a x^2 + b x + c`, ascending. Degenerates to the linear case.
pub fn quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        if b == 0.0 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        // Treat a slightly negative discriminant as a double root.
        let scale = (b * b).max((4.0 * a * c).abs());
        if disc > -1e-14 * scale {
            return vec![-b / (2.0 * a)];
        }
        return Vec::new();
    }
    if disc == 0.0 {
        return vec![-b / (2.0 * a)];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut roots = vec![q / a, c / q];
    roots.sort_by(f64::total_cmp);
    roots
}

/// Real roots of `a x^3 + b x^2 + c x + d`, ascending.
pub fn cubic(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    if a == 0.0 {
        return quadratic(b, c, d);
    }
    let (b, c, d) = (b / a, c / a, d / a);
    let q = (b * b - 3.0 * c) / 9.0;
    let r = (2.0 * b * b * b - 9.0 * b * c + 27.0 * d) / 54.0;
    let q3 = q * q * q;
    let r2 = r * r;
    let mut roots = if r2 < q3 {
        let theta = (r / q3.sqrt()).clamp(-1.0, 1.0).acos();
        let m = -2.0 * q.sqrt();
        let tau = std::f64::consts::TAU;
        vec![
            m * (theta / 3.0).cos() - b / 3.0,
            m * ((theta + tau) / 3.0).cos() - b / 3.0,
            m * ((theta - tau) / 3.0).cos() - b / 3.0,
        ]
    } else {
        let big_a = -r.signum() * (r.abs() + (r2 - q3).sqrt()).cbrt();
        let big_b = if big_a == 0.0 { 0.0 } else { q / big_a };
        let mut v = vec![big_a + big_b - b / 3.0];
        // Near-zero discriminant: the pair of complex roots collapses onto a
        // real double root.
        let scale = r2.max(q3.abs()).max(f64::MIN_POSITIVE);
        if (r2 - q3).abs() <= 1e-12 * scale && big_a != 0.0 {
            v.push(-0.5 * (big_a + big_b) - b / 3.0);
        }
        v
    };
    let coeffs = [d, c, b, 1.0];
    for x in roots.iter_mut() {
        *x = newton_polish(&coeffs, *x, 2);
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// Real roots of `a x^4 + b x^3 + c x^2 + d x + e`, ascending.
///
/// Ferrari's method via the resolvent cubic; every root gets two Newton
/// polishing steps on the undepressed polynomial.
pub fn quartic(a: f64, b: f64, c: f64, d: f64, e: f64) -> Vec<f64> {
    if a == 0.0 {
        return cubic(b, c, d, e);
    }
    let (b, c, d, e) = (b / a, c / a, d / a, e / a);
    // x = y - b/4  ->  y^4 + p y^2 + q y + r
    let shift = b / 4.0;
    let b2 = b * b;
    let p = c - 3.0 * b2 / 8.0;
    let q = d - b * c / 2.0 + b2 * b / 8.0;
    let r = e - b * d / 4.0 + b2 * c / 16.0 - 3.0 * b2 * b2 / 256.0;

    let mut ys = Vec::with_capacity(4);
    let scale = 1.0 + p.abs() + r.abs().sqrt();
    if q.abs() <= 1e-14 * scale * scale.sqrt() {
        // Biquadratic in z = y^2.
        for z in quadratic(1.0, p, r) {
            if z > 0.0 {
                let s = z.sqrt();
                ys.push(-s);
                ys.push(s);
            } else if z == 0.0 || z > -1e-14 * scale {
                ys.push(0.0);
            }
        }
    } else {
        // 8m^3 + 8p m^2 + (2p^2 - 8r) m - q^2 = 0 has a positive root when q != 0.
        let m = cubic(8.0, 8.0 * p, 2.0 * p * p - 8.0 * r, -q * q)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        if m > 0.0 {
            let s = (2.0 * m).sqrt();
            let k = q / (2.0 * s);
            ys.extend(quadratic(1.0, -s, p / 2.0 + m + k));
            ys.extend(quadratic(1.0, s, p / 2.0 + m - k));
        }
    }

    let coeffs = [e, d, c, b, 1.0];
    let mut roots: Vec<f64> = ys
        .into_iter()
        .map(|y| newton_polish(&coeffs, y - shift, 2))
        .collect();
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));
    roots
}

fn newton_polish(coeffs: &[f64], mut x: f64, steps: usize) -> f64 {
    for _ in 0..steps {
        let (f, df) = eval_with_derivative(coeffs, x);
        if df == 0.0 || !df.is_finite() {
            break;
        }
        let next = x - f / df;
        if !next.is_finite() {
            break;
        }
        // Only accept the step when it does not make the residual worse.
        if eval(coeffs, next).abs() <= f.abs() {
            x = next;
        } else {
            break;
        }
    }
    x
}

fn eval_with_derivative(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut f = 0.0;
    let mut df = 0.0;
    for &c in coeffs.iter().rev() {
        df = df * x + f;
        f = f * x + c;
    }
    (f, df)
}

/// Effective degree after dropping negligible leading coefficients.
fn trimmed(coeffs: &[f64]) -> &[f64] {
    let scale = coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return &[];
    }
    let mut n = coeffs.len();
    while n > 0 && coeffs[n - 1].abs() <= 1e-14 * scale {
        n -= 1;
    }
    &coeffs[..n]
}

/// Real roots of an ascending-power polynomial inside `[lo, hi]`, ascending.
///
/// Degrees up to four use the closed forms; anything higher is bracketed by
/// scanning `[lo, hi]` for sign changes and refined by bisection, which can
/// miss roots of even multiplicity (irrelevant for locating extrema).
pub fn real_roots_in(coeffs: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let c = trimmed(coeffs);
    let mut roots = match c.len() {
        0 | 1 => Vec::new(),
        2 => vec![-c[0] / c[1]],
        3 => quadratic(c[2], c[1], c[0]),
        4 => cubic(c[3], c[2], c[1], c[0]),
        5 => quartic(c[4], c[3], c[2], c[1], c[0]),
        _ => bracketed_roots(c, lo, hi),
    };
    roots.retain(|&x| x >= lo && x <= hi);
    roots
}

fn bracketed_roots(coeffs: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let n = 64 * coeffs.len();
    let mut roots = Vec::new();
    let mut t0 = lo;
    let mut f0 = eval(coeffs, t0);
    for k in 1..=n {
        let t1 = lo + (hi - lo) * k as f64 / n as f64;
        let f1 = eval(coeffs, t1);
        if f0 == 0.0 {
            roots.push(t0);
        } else if f0 * f1 < 0.0 {
            roots.push(bisect(coeffs, t0, t1, f0));
        }
        t0 = t1;
        f0 = f1;
    }
    if f0 == 0.0 {
        roots.push(t0);
    }
    roots
}

fn bisect(coeffs: &[f64], mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = eval(coeffs, m);
        if fm == 0.0 {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}
