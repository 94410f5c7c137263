//! Fixed quadrature rules: a degree-5 triangle rule, Gauss-Legendre on
//! segments, and an error-controlled adaptive segment rule for integrands
//! with endpoint singularities.

use crate::geometry::Point;
use std::sync::OnceLock;

/// Degree-5 rule with 7 points, given as (barycentric coords, weight).
/// Weights sum to one; multiply by the element area.
pub fn triangle_rule_deg5() -> &'static [([f64; 3], f64); 7] {
    static RULE: OnceLock<[([f64; 3], f64); 7]> = OnceLock::new();
    RULE.get_or_init(|| {
        let s15 = 15.0_f64.sqrt();
        let a1 = (6.0 + s15) / 21.0;
        let b1 = (9.0 - 2.0 * s15) / 21.0;
        let w1 = (155.0 + s15) / 1200.0;
        let a2 = (6.0 - s15) / 21.0;
        let b2 = (9.0 + 2.0 * s15) / 21.0;
        let w2 = (155.0 - s15) / 1200.0;
        let t = 1.0 / 3.0;
        [
            ([t, t, t], 9.0 / 40.0),
            ([b1, a1, a1], w1),
            ([a1, b1, a1], w1),
            ([a1, a1, b1], w1),
            ([b2, a2, a2], w2),
            ([a2, b2, a2], w2),
            ([a2, a2, b2], w2),
        ]
    })
}

/// Integrates `f` over the triangle (p0, p1, p2) with the degree-5 rule.
pub fn integrate_triangle(
    p0: Point,
    p1: Point,
    p2: Point,
    area: f64,
    f: &dyn Fn(f64, f64) -> f64,
) -> f64 {
    let mut acc = 0.0;
    for &(l, w) in triangle_rule_deg5() {
        let x = l[0] * p0.x + l[1] * p1.x + l[2] * p2.x;
        let y = l[0] * p0.y + l[1] * p1.y + l[2] * p2.y;
        acc += w * f(x, y);
    }
    acc * area
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed once by Newton
/// iteration on the Legendre recurrence.
pub fn gauss_legendre_16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and its derivative by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    (nodes, weights)
}

/// 16-point Gauss-Legendre quadrature of `f` over the segment from `a` to `b`.
pub fn integrate_segment(a: Point, b: Point, f: &dyn Fn(Point) -> f64) -> f64 {
    let (nodes, weights) = gauss_legendre_16();
    let mid = a.midpoint(b);
    let half = b.sub(a).scale(0.5);
    let jac = half.norm();
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        let p = mid.add(half.scale(*x));
        acc += w * f(p);
    }
    acc * jac
}

/// Adaptive segment quadrature: bisect until the two-panel value agrees with
/// the one-panel value. Handles integrable endpoint singularities that defeat
/// a single fixed rule.
pub fn integrate_segment_adaptive(a: Point, b: Point, f: &dyn Fn(Point) -> f64, tol: f64) -> f64 {
    fn recurse(
        a: Point,
        b: Point,
        whole: f64,
        f: &dyn Fn(Point) -> f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = a.midpoint(b);
        let left = integrate_segment(a, m, f);
        let right = integrate_segment(m, b, f);
        if depth >= 24 || (left + right - whole).abs() <= tol {
            return left + right;
        }
        recurse(a, m, left, f, 0.5 * tol, depth + 1)
            + recurse(m, b, right, f, 0.5 * tol, depth + 1)
    }
    let whole = integrate_segment(a, b, f);
    recurse(a, b, whole, f, tol.max(1e-15 * (1.0 + whole.abs())), 0)
}
