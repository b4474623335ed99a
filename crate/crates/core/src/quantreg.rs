//! Exact τ-quantile line fitting.
//!
//! Minimizes `(1/n) Σ l_τ(v_i − α − β u_i)` over `(α, β)` where `(u, v)` is
//! `(x, y)` for [`Direction::YonX`] and `(y, x)` for [`Direction::XonY`].
//!
//! The solver runs a Mehrotra predictor-corrector interior-point method on
//! the dual of the LP form of the problem and then polishes the result onto
//! an optimal vertex, i.e. a line through two observations. The polish walks
//! between vertices by rotating the line about one of its interpolated points
//! and taking the exact minimizer along that pencil of lines (a weighted
//! quantile of pairwise slopes). A vertex is accepted once no rotation about
//! any of its zero-residual points lowers the objective, which for a convex
//! piecewise-linear objective is global optimality. Among optimal vertices
//! the one with the smallest slope is returned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::BivariateSample;

/// Quantile level in the open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Tau(f64);

impl Tau {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Tau(value))
        } else {
            Err(Error::Parameter(format!("tau = {value} must lie in (0, 1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 − τ`.
    pub fn complement(self) -> Tau {
        Tau(1.0 - self.0)
    }

    pub const MEDIAN: Tau = Tau(0.5);
}

impl TryFrom<f64> for Tau {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Tau::new(v)
    }
}

impl From<Tau> for f64 {
    fn from(t: Tau) -> f64 {
        t.0
    }
}

impl std::fmt::Display for Tau {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Regression direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// `y` regressed on `x`.
    YonX,
    /// `x` regressed on `y`.
    XonY,
}

impl Direction {
    /// `(regressor, response)` for this direction.
    pub fn columns<'a>(&self, sample: &'a BivariateSample) -> (&'a [f64], &'a [f64]) {
        match self {
            Direction::YonX => (sample.xs(), sample.ys()),
            Direction::XonY => (sample.ys(), sample.xs()),
        }
    }
}

/// Pinball (check) loss `e·(τ − I(e < 0))`.
pub fn check_loss(e: f64, tau: Tau) -> f64 {
    if e < 0.0 {
        e * (tau.0 - 1.0)
    } else {
        e * tau.0
    }
}

/// One fitted quantile line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantRegFit {
    pub tau: Tau,
    pub direction: Direction,
    pub intercept: f64,
    pub slope: f64,
    /// Averaged pinball loss at the optimum.
    pub objective: f64,
    /// Residuals strictly below zero.
    pub n_neg: usize,
    /// Residuals equal to zero (the interpolated observations and any exact ties).
    pub n_zero: usize,
    basis: [usize; 2],
}

/// Sign class of a residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualSign {
    Negative,
    Zero,
    Positive,
}

const ZERO_REL: f64 = 1e-12;
const MAX_PIVOT_CANDIDATES: usize = 32;
const MAX_PIVOTS: usize = 10_000;

fn zero_tol(resp: f64, fitted: f64, intercept: f64) -> f64 {
    ZERO_REL * (resp.abs() + fitted.abs() + intercept.abs())
}

impl QuantRegFit {
    /// Residuals `v_i − α − β u_i` of this fit on `sample`.
    pub fn residuals(&self, sample: &BivariateSample) -> Vec<f64> {
        let (u, v) = self.direction.columns(sample);
        u.iter().zip(v).map(|(ui, vi)| vi - self.intercept - self.slope * ui).collect()
    }

    /// Residual sign classes, with the two interpolated observations always
    /// classified as zero. `sample` must be the sample the fit came from.
    pub fn residual_signs(&self, sample: &BivariateSample) -> Vec<ResidualSign> {
        let (u, v) = self.direction.columns(sample);
        classify(u, v, self.intercept, self.slope, &self.basis)
    }

    /// Fitted value at regressor value `u`.
    pub fn predict(&self, u: f64) -> f64 {
        self.intercept + self.slope * u
    }

    /// Indices of the two observations the line passes through.
    pub fn basis(&self) -> [usize; 2] {
        self.basis
    }
}

fn classify(u: &[f64], v: &[f64], a: f64, b: f64, basis: &[usize; 2]) -> Vec<ResidualSign> {
    let mut out: Vec<ResidualSign> = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| {
            let fitted = a + b * ui;
            let r = vi - fitted;
            if r.abs() <= zero_tol(vi, b * ui, a) {
                ResidualSign::Zero
            } else if r < 0.0 {
                ResidualSign::Negative
            } else {
                ResidualSign::Positive
            }
        })
        .collect();
    for &k in basis {
        out[k] = ResidualSign::Zero;
    }
    out
}

/// Fits the τ-quantile line in one direction.
pub fn fit_line(sample: &BivariateSample, tau: Tau, direction: Direction) -> Result<QuantRegFit> {
    let (u, v) = direction.columns(sample);
    let n = u.len();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    if u.iter().all(|&ui| ui == u[0]) {
        return Err(Error::DegenerateDesign(match direction {
            Direction::YonX => "all x values are equal",
            Direction::XonY => "all y values are equal",
        }));
    }
    let vertex = solve(u, v, tau.0);
    let signs = classify(u, v, vertex.alpha, vertex.beta, &vertex.basis);
    let n_neg = signs.iter().filter(|s| **s == ResidualSign::Negative).count();
    let n_zero = signs.iter().filter(|s| **s == ResidualSign::Zero).count();
    Ok(QuantRegFit {
        tau,
        direction,
        intercept: vertex.alpha,
        slope: vertex.beta,
        objective: vertex.obj / n as f64,
        n_neg,
        n_zero,
        basis: vertex.basis,
    })
}

/// Fits both directions: `(Y on X, X on Y)`.
pub fn fit_both(sample: &BivariateSample, tau: Tau) -> Result<(QuantRegFit, QuantRegFit)> {
    Ok((fit_line(sample, tau, Direction::YonX)?, fit_line(sample, tau, Direction::XonY)?))
}

/// Summed pinball loss of the line `α + β u`.
pub fn loss_sum(u: &[f64], v: &[f64], tau: f64, alpha: f64, beta: f64) -> f64 {
    u.iter()
        .zip(v)
        .map(|(ui, vi)| {
            let e = vi - alpha - beta * ui;
            if e < 0.0 {
                e * (tau - 1.0)
            } else {
                e * tau
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy)]
struct Vertex {
    alpha: f64,
    beta: f64,
    basis: [usize; 2],
    obj: f64,
}

fn solve(u: &[f64], v: &[f64], tau: f64) -> Vertex {
    let (a0, b0) = interior_point(u, v, tau);
    polish(u, v, tau, a0, b0)
}

// ---------------------------------------------------------------------------
// Interior point
// ---------------------------------------------------------------------------

const IPM_MAX_ITER: usize = 100;
const IPM_GAP_TOL: f64 = 1e-10;
const IPM_STEP_SCALE: f64 = 0.99995;

/// Returns an approximate `(α, β)` from a primal-dual interior-point solve of
/// `max v'a  s.t.  X'a = (1−τ)X'1, 0 ≤ a ≤ 1` on standardized data.
fn interior_point(u: &[f64], v: &[f64], tau: f64) -> (f64, f64) {
    let n = u.len();
    let nf = n as f64;
    let (mu_u, sd_u) = location_scale(u);
    let (mu_v, sd_v) = location_scale(v);
    let x: Vec<f64> = u.iter().map(|ui| (ui - mu_u) / sd_u).collect();
    // Objective coefficients of the minimization form: c = −v.
    let c: Vec<f64> = v.iter().map(|vi| -(vi - mu_v) / sd_v).collect();

    let sum_x: f64 = x.iter().sum();
    let b = [(1.0 - tau) * nf, (1.0 - tau) * sum_x];

    let mut a = vec![1.0 - tau; n];
    let mut s = vec![tau; n];

    // Least-squares start for the multipliers.
    let sxx: f64 = x.iter().map(|xi| xi * xi).sum();
    let sc: f64 = c.iter().sum();
    let sxc: f64 = x.iter().zip(&c).map(|(xi, ci)| xi * ci).sum();
    let mut lam = solve2([nf, sum_x, sum_x, sxx], [sc, sxc]).unwrap_or([0.0, 0.0]);

    let resid: Vec<f64> = x.iter().zip(&c).map(|(xi, ci)| ci - lam[0] - lam[1] * xi).collect();
    let mean_abs = resid.iter().map(|r| r.abs()).sum::<f64>() / nf;
    let delta = 1e-3 * mean_abs.max(1e-8);
    let mut z: Vec<f64> = resid.iter().map(|r| r.max(0.0) + delta).collect();
    let mut w: Vec<f64> = resid.iter().map(|r| (-r).max(0.0) + delta).collect();

    let mut d = vec![0.0; n];
    let mut rd = vec![0.0; n];
    let mut step = NewtonStep::new(n);
    let mut corr = NewtonStep::new(n);
    let mut raz = vec![0.0; n];
    let mut rsw = vec![0.0; n];

    for _ in 0..IPM_MAX_ITER {
        // Residuals.
        let mut ax = [0.0, 0.0];
        for i in 0..n {
            ax[0] += a[i];
            ax[1] += x[i] * a[i];
            rd[i] = c[i] - lam[0] - lam[1] * x[i] - z[i] + w[i];
        }
        let rp = [b[0] - ax[0], b[1] - ax[1]];
        let comp: f64 = (0..n).map(|i| a[i] * z[i] + s[i] * w[i]).sum();
        let primal: f64 = c.iter().zip(&a).map(|(ci, ai)| ci * ai).sum();
        let rd_norm = rd.iter().map(|r| r.abs()).fold(0.0, f64::max);
        let rp_norm = rp[0].abs().max(rp[1].abs()) / nf;
        if comp / (1.0 + primal.abs()) < IPM_GAP_TOL && rd_norm < 1e-9 && rp_norm < 1e-9 {
            break;
        }
        let mu = comp / (2.0 * nf);

        for i in 0..n {
            d[i] = 1.0 / (z[i] / a[i] + w[i] / s[i]);
        }

        // Predictor.
        for i in 0..n {
            raz[i] = -a[i] * z[i];
            rsw[i] = -s[i] * w[i];
        }
        if !step.solve(&x, &a, &s, &z, &w, &d, &rd, rp, &raz, &rsw) {
            break;
        }
        let (ap, ad) = step.step_lengths(&a, &s, &z, &w);
        let mu_aff: f64 = (0..n)
            .map(|i| {
                (a[i] + ap * step.da[i]) * (z[i] + ad * step.dz[i])
                    + (s[i] - ap * step.da[i]) * (w[i] + ad * step.dw[i])
            })
            .sum::<f64>()
            / (2.0 * nf);
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        for i in 0..n {
            raz[i] = sigma * mu - a[i] * z[i] - step.da[i] * step.dz[i];
            rsw[i] = sigma * mu - s[i] * w[i] + step.da[i] * step.dw[i];
        }
        if !corr.solve(&x, &a, &s, &z, &w, &d, &rd, rp, &raz, &rsw) {
            break;
        }
        let (ap, ad) = corr.step_lengths(&a, &s, &z, &w);
        for i in 0..n {
            a[i] += ap * corr.da[i];
            s[i] = 1.0 - a[i];
            z[i] += ad * corr.dz[i];
            w[i] += ad * corr.dw[i];
        }
        lam[0] += ad * corr.dl[0];
        lam[1] += ad * corr.dl[1];
        if !(lam[0].is_finite() && lam[1].is_finite()) {
            lam = [0.0, 0.0];
            break;
        }
    }

    // θ = −λ on the standardized scale.
    let (a_std, b_std) = (-lam[0], -lam[1]);
    let beta = b_std * sd_v / sd_u;
    let alpha = mu_v + sd_v * a_std - beta * mu_u;
    (alpha, beta)
}

fn location_scale(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    (m, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
}

/// Solves the 2×2 system `[m0 m1; m2 m3] x = r`.
fn solve2(m: [f64; 4], r: [f64; 2]) -> Option<[f64; 2]> {
    let det = m[0] * m[3] - m[1] * m[2];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([(m[3] * r[0] - m[1] * r[1]) / det, (m[0] * r[1] - m[2] * r[0]) / det])
}

struct NewtonStep {
    da: Vec<f64>,
    dz: Vec<f64>,
    dw: Vec<f64>,
    dl: [f64; 2],
}

impl NewtonStep {
    fn new(n: usize) -> Self {
        Self { da: vec![0.0; n], dz: vec![0.0; n], dw: vec![0.0; n], dl: [0.0; 2] }
    }

    /// Newton direction for complementarity targets `a∘z → raz`, `s∘w → rsw`.
    #[allow(clippy::too_many_arguments)]
    fn solve(
        &mut self,
        x: &[f64],
        a: &[f64],
        s: &[f64],
        z: &[f64],
        w: &[f64],
        d: &[f64],
        rd: &[f64],
        rp: [f64; 2],
        raz: &[f64],
        rsw: &[f64],
    ) -> bool {
        let n = x.len();
        let mut m = [0.0; 4];
        let mut rhs = rp;
        for i in 0..n {
            let q = rd[i] - raz[i] / a[i] + rsw[i] / s[i];
            let dq = d[i] * q;
            m[0] += d[i];
            m[1] += d[i] * x[i];
            m[3] += d[i] * x[i] * x[i];
            rhs[0] += dq;
            rhs[1] += dq * x[i];
            // Stash q for the back-substitution.
            self.da[i] = q;
        }
        m[2] = m[1];
        let Some(dl) = solve2(m, rhs) else {
            return false;
        };
        self.dl = dl;
        for i in 0..n {
            let q = self.da[i];
            let da = d[i] * (dl[0] + dl[1] * x[i] - q);
            self.da[i] = da;
            self.dz[i] = (raz[i] - z[i] * da) / a[i];
            self.dw[i] = (rsw[i] + w[i] * da) / s[i];
        }
        true
    }

    fn step_lengths(&self, a: &[f64], s: &[f64], z: &[f64], w: &[f64]) -> (f64, f64) {
        let mut ap: f64 = 1.0;
        let mut ad: f64 = 1.0;
        for i in 0..a.len() {
            let da = self.da[i];
            if da < 0.0 {
                ap = ap.min(-IPM_STEP_SCALE * a[i] / da);
            } else if da > 0.0 {
                ap = ap.min(IPM_STEP_SCALE * s[i] / da);
            }
            if self.dz[i] < 0.0 {
                ad = ad.min(-IPM_STEP_SCALE * z[i] / self.dz[i]);
            }
            if self.dw[i] < 0.0 {
                ad = ad.min(-IPM_STEP_SCALE * w[i] / self.dw[i]);
            }
        }
        (ap, ad)
    }
}

// ---------------------------------------------------------------------------
// Vertex polish
// ---------------------------------------------------------------------------

struct Pencil {
    buf: Vec<(f64, f64)>,
}

impl Pencil {
    /// Exact minimizer over lines through observation `k`: returns the
    /// smallest optimal slope and the observation the optimal line also hits.
    fn rotate_about(&mut self, u: &[f64], v: &[f64], tau: f64, k: usize) -> Option<(f64, usize)> {
        self.buf.clear();
        let (uk, vk) = (u[k], v[k]);
        let mut target = 0.0;
        let mut total = 0.0;
        for (i, (&ui, &vi)) in u.iter().zip(v).enumerate() {
            let du = ui - uk;
            if du == 0.0 {
                continue;
            }
            let slope = (vi - vk) / du;
            let w = du.abs();
            target += if du > 0.0 { w * tau } else { w * (1.0 - tau) };
            total += w;
            self.buf.push((slope, i as f64));
        }
        if self.buf.is_empty() {
            return None;
        }
        self.buf.sort_unstable_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
        let tol = 1e-13 * total;
        let mut cum = 0.0;
        for &(slope, idx) in &self.buf {
            let i = idx as usize;
            cum += (u[i] - uk).abs();
            if cum >= target - tol {
                return Some((slope, i));
            }
        }
        self.buf.last().map(|&(s, i)| (s, i as usize))
    }
}

fn polish(u: &[f64], v: &[f64], tau: f64, a0: f64, b0: f64) -> Vertex {
    let n = u.len();
    let mut pencil = Pencil { buf: Vec::with_capacity(n) };

    // Start from the pencil through the observation closest to the IPM line.
    let mut start = 0;
    let mut best_abs = f64::INFINITY;
    for i in 0..n {
        let r = (v[i] - a0 - b0 * u[i]).abs();
        if r < best_abs && r.is_finite() {
            best_abs = r;
            start = i;
        }
    }
    let mut cur = match vertex_from_pencil(&mut pencil, u, v, tau, start) {
        Some(vx) => vx,
        None => fallback_vertex(u, v, tau),
    };

    for _ in 0..MAX_PIVOTS {
        let eps = 1e-12 * cur.obj.abs();
        let mut improve: Option<Vertex> = None;
        let mut tie: Option<Vertex> = None;
        for k in pivot_candidates(u, v, &cur) {
            let Some(cand) = vertex_from_pencil(&mut pencil, u, v, tau, k) else {
                continue;
            };
            if cand.beta == cur.beta && cand.alpha == cur.alpha {
                continue;
            }
            if cand.obj < cur.obj - eps {
                if improve.is_none_or(|b| cand.obj < b.obj) {
                    improve = Some(cand);
                }
            } else if cand.obj <= cur.obj + eps
                && cand.beta < cur.beta
                && tie.is_none_or(|t| cand.beta < t.beta)
            {
                tie = Some(cand);
            }
        }
        match (improve, tie) {
            (Some(vx), _) | (None, Some(vx)) => cur = vx,
            (None, None) => break,
        }
    }
    cur
}

fn vertex_from_pencil(pencil: &mut Pencil, u: &[f64], v: &[f64], tau: f64, k: usize) -> Option<Vertex> {
    let (beta, m) = pencil.rotate_about(u, v, tau, k)?;
    let alpha = v[k] - beta * u[k];
    let obj = loss_sum(u, v, tau, alpha, beta);
    Some(Vertex { alpha, beta, basis: [k.min(m), k.max(m)], obj })
}

/// Basis points first, then other (near-)zero residuals, capped.
fn pivot_candidates(u: &[f64], v: &[f64], cur: &Vertex) -> Vec<usize> {
    let mut out = vec![cur.basis[0], cur.basis[1]];
    for i in 0..u.len() {
        if out.len() >= MAX_PIVOT_CANDIDATES {
            break;
        }
        if i == cur.basis[0] || i == cur.basis[1] {
            continue;
        }
        let bu = cur.beta * u[i];
        let r = v[i] - cur.alpha - bu;
        if r.abs() <= zero_tol(v[i], bu, cur.alpha) {
            out.push(i);
        }
    }
    out
}

/// Line through the first two observations with distinct regressor values.
fn fallback_vertex(u: &[f64], v: &[f64], tau: f64) -> Vertex {
    let j = (1..u.len()).find(|&j| u[j] != u[0]).unwrap_or(1);
    let beta = (v[j] - v[0]) / (u[j] - u[0]);
    let alpha = v[0] - beta * u[0];
    Vertex { alpha, beta, basis: [0, j], obj: loss_sum(u, v, tau, alpha, beta) }
}
