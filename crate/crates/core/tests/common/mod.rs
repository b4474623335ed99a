#![allow(dead_code)]

use tailcorr::quantreg::loss_sum;

/// Minimum of the averaged pinball loss over all lines through two data
/// points. Some optimal line always interpolates two observations, so this
/// is the exact optimum (O(n³)).
pub fn pair_enumeration_min(u: &[f64], v: &[f64], tau: f64) -> f64 {
    let n = u.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            if u[i] == u[j] {
                continue;
            }
            let beta = (v[j] - v[i]) / (u[j] - u[i]);
            let alpha = v[i] - beta * u[i];
            best = best.min(loss_sum(u, v, tau, alpha, beta));
        }
    }
    best / n as f64
}

/// Composite Simpson rule on `[a, b]` with `m` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for k in 1..m {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
