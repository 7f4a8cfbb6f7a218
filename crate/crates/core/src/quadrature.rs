//! Quadrature rules on the unit interval and on triangles.

/// Gauss-Legendre rule with `n` points on `[0, 1]`; weights sum to 1.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "at least one quadrature point");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Newton iteration on P_n from the Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = x;
                p0 = 1.0;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push(((1.0 - x) / 2.0, w / 2.0));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Barycentric coordinates and weight (weights sum to 1).
pub type TriPoint = ([f64; 3], f64);

/// Symmetric 6-point rule, exact for polynomials of degree 4.
pub fn triangle_deg4() -> Vec<TriPoint> {
    let (a1, w1) = (0.445_948_490_915_965, 0.223_381_589_678_011);
    let (a2, w2) = (0.091_576_213_509_771, 0.109_951_743_655_322);
    let mut out = Vec::with_capacity(6);
    for (a, w) in [(a1, w1), (a2, w2)] {
        let b = 1.0 - 2.0 * a;
        out.push(([b, a, a], w));
        out.push(([a, b, a], w));
        out.push(([a, a, b], w));
    }
    out
}

/// Collapsed tensor Gauss rule exact for polynomials of the given degree.
pub fn triangle_rule(degree: usize) -> Vec<TriPoint> {
    if degree <= 4 {
        return triangle_deg4();
    }
    let n = (degree + 3) / 2;
    let g = gauss_legendre(n);
    let mut out = Vec::with_capacity(n * n);
    for &(xi, wx) in &g {
        for &(eta, wy) in &g {
            // (xi, eta) in the unit square -> triangle via l1 = xi, l2 = (1 - xi) eta
            let l1 = xi;
            let l2 = (1.0 - xi) * eta;
            out.push(([1.0 - l1 - l2, l1, l2], 2.0 * wx * wy * (1.0 - xi)));
        }
    }
    out
}

pub fn bary_to_point(p: &[[f64; 2]; 3], l: [f64; 3]) -> [f64; 2] {
    [
        l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
        l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
    ]
}
