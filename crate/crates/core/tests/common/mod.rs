//! Shared independent oracles for integration tests: exact moment
//! recursions for the trained walk and adaptive Simpson quadrature.
#![allow(dead_code)]

/// Exact (E[S(n)], Var[S(n)]) for the canonically trained walk, from the
/// one-draw reduction: E[S(m+1)] = E[S(m)](1 + q/m) and
/// E[S(m+1)^2] = E[S(m)^2](1 + 2q/m) + 1 with q = 2p - 1.
pub fn exact_mean_var(p: f64, k: u64, n: u64) -> (f64, f64) {
    let q = 2.0 * p - 1.0;
    let mut m1 = k as f64;
    let mut m2 = (k as f64) * (k as f64);
    for m in k..n {
        let m1_next = m1 * (1.0 + q / m as f64);
        m2 = m2 * (1.0 + 2.0 * q / m as f64) + 1.0;
        m1 = m1_next;
    }
    (m1, m2 - m1 * m1)
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, m, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, right, 0.5 * tol, depth - 1)
        }
    }
    recurse(f, a, b, simpson(f, a, b), tol, 40)
}
