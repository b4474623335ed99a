//! Conditional density values at the fitted quantile lines.
//!
//! The sandwich variance needs `f_{Y|X}(θ̂₂.₁'x_i*)` and `f_{X|Y}(θ̂₁.₂'y_i*)`
//! for every observation. Two estimators are provided:
//!
//! - **BH**: a weighted-kernel conditional density with Gaussian kernels and
//!   normal-reference plug-in bandwidths. Consistent for iid data.
//! - **HK**: a difference quotient of two nearby quantile fits,
//!   `2h / (q̂(τ+h) − q̂(τ−h) − ε)`, valid when conditional quantiles are
//!   linear (including GARCH-type dependence).

pub mod normal;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantreg::{fit_both, QuantRegFit, Tau};
use crate::sampling::{mean, pearson, BivariateSample};

/// Truncation threshold for `u²` in Gaussian kernel evaluations; beyond it
/// `exp(−u²/2) < 5e-18` and the term is dropped.
const KERNEL_CUTOFF_SQ: f64 = 80.0;

/// Range parameter `k` of the plug-in bandwidth rule.
pub const BH_K: f64 = 3.0;

/// `∫ φ(w)² dw = 1 / (2√π)`.
pub const GAUSSIAN_ROUGHNESS: f64 = 0.282_094_791_773_878_14;

pub const HK_EPSILON: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityMethod {
    Bh,
    Hk,
}

impl DensityMethod {
    pub fn label(&self) -> &'static str {
        match self {
            DensityMethod::Bh => "bh",
            DensityMethod::Hk => "hk",
        }
    }
}

impl std::str::FromStr for DensityMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bh" => Ok(DensityMethod::Bh),
            "hk" => Ok(DensityMethod::Hk),
            other => Err(Error::Parameter(format!("unknown density method '{other}'"))),
        }
    }
}

/// Smoothing bandwidths of the BH estimator. `a_*` smooths the conditioning
/// variable, `b_*` the response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BhBandwidths {
    pub a_yx: f64,
    pub b_yx: f64,
    pub a_xy: f64,
    pub b_xy: f64,
}

/// Density values, one per observation and direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityValues {
    pub method: DensityMethod,
    pub f_yx: Vec<f64>,
    pub f_xy: Vec<f64>,
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Plug-in bandwidths `(a, b)` for the density of the response given the
/// regressor, from the regressor sd, the response sd and their correlation.
fn bh_pair(n: usize, sd_reg: f64, sd_resp: f64, rho: f64) -> Result<(f64, f64)> {
    let k = BH_K;
    let lambda = normal::cdf(k) - normal::cdf(-k);
    let r = GAUSSIAN_ROUGHNESS;
    // Regression slope; fractional powers use its magnitude.
    let d = (rho * sd_resp / sd_reg).abs();
    let p = ((1.0 - rho * rho) * sd_resp * sd_resp).sqrt();
    let s = sd_reg;
    let v = (2.0 * PI).sqrt() * s.powi(3) * (3.0 * d * d * s * s + 8.0 * p * p) * lambda
        - 16.0 * k * s * s * p * p * (-k * k / 2.0).exp();
    if !(v > 0.0) || !(d > 0.0) || !(p > 0.0) {
        return Err(Error::DegenerateMoments(format!(
            "bandwidth terms not positive (slope {d:.3e}, conditional sd {p:.3e}, v {v:.3e}); \
             rescale the data or use --density hk"
        )));
    }
    // Logs keep the large powers of the regressor sd in range.
    let ln_s = s.ln();
    let ln_lambda = lambda.ln();
    let ln_root8 = (288.0f64.ln() + 9.0 * PI.ln() + 58.0 * ln_s + 2.0 * ln_lambda) / 8.0;
    let root4 = ((18.0f64.ln() + PI.ln() + 10.0 * ln_s + 2.0 * ln_lambda) / 4.0).exp();
    let ln_num = (16.0 * k * r * r).ln() + 5.0 * p.ln() + ln_root8;
    let ln_den = (n as f64).ln() + 2.5 * d.ln() + 0.75 * v.ln() + (v.sqrt() + d * root4).ln();
    let a = ((ln_num - ln_den) / 6.0).exp();
    let b = (d * d * v / (3.0 * (2.0 * PI).sqrt() * s.powi(5) * lambda)).powf(0.25) * a;
    if !(a.is_finite() && a > 0.0 && b.is_finite() && b > 0.0) {
        return Err(Error::DegenerateMoments(format!("non-finite bandwidths (a={a}, b={b})")));
    }
    Ok((a, b))
}

/// Normal-reference plug-in bandwidths (range `k = 3`, Gaussian kernel).
/// The X·Y pair is the Y·X rule with the variables interchanged.
pub fn bh_bandwidths(sample: &BivariateSample) -> Result<BhBandwidths> {
    let n = sample.len();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    let sx = sample_sd(sample.xs());
    let sy = sample_sd(sample.ys());
    if !(sx > 0.0 && sy > 0.0) {
        return Err(Error::DegenerateMoments("zero sample variance".into()));
    }
    let rho = pearson(sample.xs(), sample.ys())
        .ok_or_else(|| Error::DegenerateMoments("zero sample variance".into()))?;
    if rho.abs() >= 1.0 - 1e-12 {
        return Err(Error::DegenerateMoments(format!("|correlation| = {} is 1", rho.abs())));
    }
    if rho == 0.0 {
        return Err(Error::DegenerateMoments("sample correlation is exactly zero".into()));
    }
    let (a_yx, b_yx) = bh_pair(n, sx, sy, rho)?;
    let (a_xy, b_xy) = bh_pair(n, sy, sx, rho)?;
    Ok(BhBandwidths { a_yx, b_yx, a_xy, b_xy })
}

/// Normalized kernel weights `ω_j(u_i)` of observation `i` on all others.
pub fn bh_weights(reg: &[f64], a: f64, i: usize) -> Vec<f64> {
    let ui = reg[i];
    let mut w: Vec<f64> = reg.iter().map(|uj| gauss_unnorm((ui - uj) / a)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

fn gauss_unnorm(u: f64) -> f64 {
    let u2 = u * u;
    if u2 > KERNEL_CUTOFF_SQ {
        0.0
    } else {
        (-0.5 * u2).exp()
    }
}

/// Density of the response given the regressor, evaluated at each target
/// set `targets[t][i]` (fitted values at observation `i`).
fn bh_direction(reg: &[f64], resp: &[f64], a: f64, b: f64, targets: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = reg.len();
    let mut out = vec![vec![0.0; n]; targets.len()];
    let mut active: Vec<(f64, f64)> = Vec::with_capacity(n);
    let inv_a = 1.0 / a;
    let inv_b = 1.0 / b;
    let norm = normal::pdf(0.0) * inv_b;
    for i in 0..n {
        active.clear();
        let ui = reg[i];
        let mut total = 0.0;
        for (uj, vj) in reg.iter().zip(resp) {
            let w = gauss_unnorm((ui - uj) * inv_a);
            if w > 0.0 {
                total += w;
                active.push((w, *vj));
            }
        }
        for (t, tgt) in targets.iter().enumerate() {
            let y = tgt[i];
            let mut acc = 0.0;
            for &(w, vj) in &active {
                acc += w * gauss_unnorm((y - vj) * inv_b);
            }
            out[t][i] = norm * acc / total;
        }
    }
    out
}

/// BH density values for several τ at once, sharing the kernel weights.
/// Each entry of `fits` is a `(Y on X, X on Y)` pair from `sample`.
pub fn bh_density_values_multi(
    sample: &BivariateSample,
    fits: &[(&QuantRegFit, &QuantRegFit)],
    bw: &BhBandwidths,
) -> Result<Vec<DensityValues>> {
    for v in [bw.a_yx, bw.b_yx, bw.a_xy, bw.b_xy] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Parameter(format!("bandwidth {v} must be positive and finite")));
        }
    }
    let (xs, ys) = (sample.xs(), sample.ys());
    let t_yx: Vec<Vec<f64>> =
        fits.iter().map(|(f, _)| xs.iter().map(|&x| f.predict(x)).collect()).collect();
    let t_xy: Vec<Vec<f64>> =
        fits.iter().map(|(_, g)| ys.iter().map(|&y| g.predict(y)).collect()).collect();
    let f_yx = bh_direction(xs, ys, bw.a_yx, bw.b_yx, &t_yx);
    let f_xy = bh_direction(ys, xs, bw.a_xy, bw.b_xy, &t_xy);
    Ok(f_yx
        .into_iter()
        .zip(f_xy)
        .map(|(f_yx, f_xy)| DensityValues { method: DensityMethod::Bh, f_yx, f_xy })
        .collect())
}

/// BH density values at one pair of fitted lines.
pub fn bh_density_values(
    sample: &BivariateSample,
    fits: (&QuantRegFit, &QuantRegFit),
    bw: &BhBandwidths,
) -> Result<DensityValues> {
    Ok(bh_density_values_multi(sample, &[fits], bw)?.remove(0))
}

/// Quantile-level bandwidth `h_n`, optimal under normality.
pub fn hk_bandwidth(n: usize, tau: Tau) -> f64 {
    let z = normal::inv_cdf(tau.value());
    let phi = normal::pdf(z);
    let core = 4.5 * phi.powi(4) / (2.0 * z * z + 1.0).powi(2);
    (n as f64).powf(-0.2) * core.powf(0.2)
}

/// `(τ − h_n, τ + h_n)` clamped into `[1/(n+1), 1 − 1/(n+1)]`.
pub fn hk_tau_bounds(n: usize, tau: Tau) -> Result<(Tau, Tau)> {
    let h = hk_bandwidth(n, tau);
    let edge = 1.0 / (n as f64 + 1.0);
    let lo = (tau.value() - h).max(edge);
    let hi = (tau.value() + h).min(1.0 - edge);
    if !(lo < hi) {
        return Err(Error::Parameter(format!("empty HK window around tau = {tau}")));
    }
    Ok((Tau::new(lo)?, Tau::new(hi)?))
}

/// HK density values from pre-computed auxiliary fits at the two window
/// edges (`lo` and `hi` are `(Y on X, X on Y)` pairs).
pub fn hk_density_from_fits(
    sample: &BivariateSample,
    lo: (&QuantRegFit, &QuantRegFit),
    hi: (&QuantRegFit, &QuantRegFit),
    eps: f64,
) -> DensityValues {
    let width = hi.0.tau.value() - lo.0.tau.value();
    let quotient = |dq: f64| {
        let den = dq - eps;
        if den > 0.0 {
            width / den
        } else {
            0.0
        }
    };
    let f_yx = sample.xs().iter().map(|&x| quotient(hi.0.predict(x) - lo.0.predict(x))).collect();
    let f_xy = sample.ys().iter().map(|&y| quotient(hi.1.predict(y) - lo.1.predict(y))).collect();
    DensityValues { method: DensityMethod::Hk, f_yx, f_xy }
}

/// HK density values at level τ: fits both directions at the two window
/// edges and forms the difference quotients.
pub fn hk_density_values(sample: &BivariateSample, tau: Tau, eps: f64) -> Result<DensityValues> {
    let (lo, hi) = hk_tau_bounds(sample.len(), tau)?;
    let lo_fits = fit_both(sample, lo)?;
    let hi_fits = fit_both(sample, hi)?;
    Ok(hk_density_from_fits(sample, (&lo_fits.0, &lo_fits.1), (&hi_fits.0, &hi_fits.1), eps))
}
