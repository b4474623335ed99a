//! Sandwich variances, confidence intervals and tail tests.
//!
//! With parameters ordered `(α₂.₁, β₂.₁, α₁.₂, β₁.₂)`, the fitted pair of
//! lines is asymptotically normal with covariance `M⁻¹ H M⁻¹`, where `H` is
//! the Gram matrix of the stacked quantile scores and `M` the
//! density-weighted design blocks. The delta method with gradient `G`
//! gives the variance of `ρ̂_τ` and of differences `ρ̂_{τ₁} − ρ̂_{τ₂}`.

use nalgebra::{Matrix2, Matrix4, SMatrix, SVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::conddens::{
    bh_bandwidths, bh_density_values_multi, hk_density_values, normal, DensityMethod,
    DensityValues, HK_EPSILON,
};
use crate::error::{Error, Result};
use crate::qcorr::{qcorr_from_fits, QCorrEstimate, TailKind};
use crate::quantreg::{fit_both, QuantRegFit, ResidualSign, Tau};
use crate::sampling::BivariateSample;

pub type Matrix8 = SMatrix<f64, 8, 8>;
pub type Vector8 = SVector<f64, 8>;

/// Largest accepted condition number of an information block.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Both fitted lines at one τ together with the density values at them.
#[derive(Debug, Clone)]
pub struct LevelFit {
    pub tau: Tau,
    pub yx: QuantRegFit,
    pub xy: QuantRegFit,
    pub dens: DensityValues,
}

impl LevelFit {
    pub fn estimate(&self) -> QCorrEstimate {
        qcorr_from_fits(&self.yx, &self.xy)
    }
}

/// Fits every τ in `taus` and evaluates the conditional densities. BH
/// bandwidths and kernel weights are shared across levels.
pub fn fit_levels(
    sample: &BivariateSample,
    taus: &[Tau],
    method: DensityMethod,
) -> Result<Vec<LevelFit>> {
    let fits = taus.iter().map(|&t| fit_both(sample, t)).collect::<Result<Vec<_>>>()?;
    let dens = match method {
        DensityMethod::Bh => {
            let bw = bh_bandwidths(sample)?;
            let pairs: Vec<_> = fits.iter().map(|(a, b)| (a, b)).collect();
            bh_density_values_multi(sample, &pairs, &bw)?
        }
        DensityMethod::Hk => taus
            .iter()
            .map(|&t| hk_density_values(sample, t, HK_EPSILON))
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(fits
        .into_iter()
        .zip(dens)
        .zip(taus)
        .map(|(((yx, xy), dens), &tau)| LevelFit { tau, yx, xy, dens })
        .collect())
}

/// Score rows `D_i = [x_i*(τ − I(e₂.₁,i < 0)) | y_i*(τ − I(e₁.₂,i < 0))]`
/// with `x* = (1, x)'`. A zero residual counts as non-negative.
pub fn score_vectors(
    sample: &BivariateSample,
    yx: &QuantRegFit,
    xy: &QuantRegFit,
) -> Vec<[f64; 4]> {
    let tau = yx.tau.value();
    let psi = |s: ResidualSign| if s == ResidualSign::Negative { tau - 1.0 } else { tau };
    yx.residual_signs(sample)
        .into_iter()
        .zip(xy.residual_signs(sample))
        .zip(sample.xs().iter().zip(sample.ys()))
        .map(|((syx, sxy), (&x, &y))| {
            let (a, b) = (psi(syx), psi(sxy));
            [a, x * a, b, y * b]
        })
        .collect()
}

/// `(1/n) Σ D_{τ₁,i} D_{τ₂,i}'`.
pub fn h_hat(scores1: &[[f64; 4]], scores2: &[[f64; 4]]) -> Matrix4<f64> {
    assert_eq!(scores1.len(), scores2.len(), "score sets must have equal length");
    let mut h = Matrix4::zeros();
    for (d1, d2) in scores1.iter().zip(scores2) {
        for r in 0..4 {
            for c in 0..4 {
                h[(r, c)] += d1[r] * d2[c];
            }
        }
    }
    h / scores1.len() as f64
}

/// Checks that a symmetric 2×2 block is positive definite and well
/// conditioned, and returns its inverse.
fn invert_block(m: Matrix2<f64>, what: &str) -> Result<Matrix2<f64>> {
    let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let half_tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d).powi(2) + b * b).sqrt();
    let (lo, hi) = (half_tr - disc, half_tr + disc);
    if !(lo > 0.0) || !(hi / lo <= CONDITION_LIMIT) || !hi.is_finite() {
        return Err(Error::SingularInformation(format!(
            "{what} block has eigenvalues {lo:.3e}, {hi:.3e}"
        )));
    }
    let det = a * d - b * b;
    Ok(Matrix2::new(d, -b, -b, a) / det)
}

/// Density-weighted block-diagonal information matrix
/// `diag((1/n)Σ f̂₂.₁,i x*x*', (1/n)Σ f̂₁.₂,i y*y*')`.
/// Fails when either block is singular or badly conditioned.
pub fn m_hat(sample: &BivariateSample, dens: &DensityValues) -> Result<Matrix4<f64>> {
    let n = sample.len() as f64;
    let block = |reg: &[f64], f: &[f64]| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (&u, &w) in reg.iter().zip(f) {
            s0 += w;
            s1 += w * u;
            s2 += w * u * u;
        }
        Matrix2::new(s0 / n, s1 / n, s1 / n, s2 / n)
    };
    let a = block(sample.xs(), &dens.f_yx);
    let b = block(sample.ys(), &dens.f_xy);
    invert_block(a, "Y-on-X")?;
    invert_block(b, "X-on-Y")?;
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(&a);
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(&b);
    Ok(m)
}

/// Inverse of a block-diagonal 4×4 information matrix.
pub fn invert_m(m: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    let a = invert_block(m.fixed_view::<2, 2>(0, 0).into_owned(), "Y-on-X")?;
    let b = invert_block(m.fixed_view::<2, 2>(2, 2).into_owned(), "X-on-Y")?;
    let mut inv = Matrix4::zeros();
    inv.fixed_view_mut::<2, 2>(0, 0).copy_from(&a);
    inv.fixed_view_mut::<2, 2>(2, 2).copy_from(&b);
    Ok(inv)
}

/// `g(β₁, β₂) = sign(β₁)√(β₂/β₁)` when `β₁β₂ > 0`, else 0.
pub fn g_fn(b1: f64, b2: f64) -> f64 {
    if b1 * b2 > 0.0 {
        b1.signum() * (b2 / b1).sqrt()
    } else {
        0.0
    }
}

/// Gradient of `ρ_τ` with respect to `(α₂.₁, β₂.₁, α₁.₂, β₁.₂)`.
pub fn g1(slope_yx: f64, slope_xy: f64) -> Vector4<f64> {
    Vector4::new(0.0, g_fn(slope_yx, slope_xy), 0.0, g_fn(slope_xy, slope_yx)) * 0.5
}

/// Gradient of `ρ_{τ₁} − ρ_{τ₂}` with slopes `(β₁, β₂)` at τ₁ and
/// `(β₃, β₄)` at τ₂ (each pair ordered Y-on-X, X-on-Y).
pub fn g2(b1: f64, b2: f64, b3: f64, b4: f64) -> Vector8 {
    let r = |p: f64, q: f64| (p / q).sqrt();
    Vector8::from_column_slice(&[
        0.0,
        r(b2, b1),
        0.0,
        r(b1, b2),
        0.0,
        -r(b4, b3),
        0.0,
        -r(b3, b4),
    ]) * 0.5
}

/// Ingredients of the single-τ sandwich.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichParts {
    pub h_mat: Matrix4<f64>,
    pub m_mat: Matrix4<f64>,
    pub g1: Vector4<f64>,
}

impl SandwichParts {
    pub fn from_level(sample: &BivariateSample, level: &LevelFit) -> Result<Self> {
        let d = score_vectors(sample, &level.yx, &level.xy);
        Ok(SandwichParts {
            h_mat: h_hat(&d, &d),
            m_mat: m_hat(sample, &level.dens)?,
            g1: g1(level.yx.slope, level.xy.slope),
        })
    }
}

/// Asymptotic variance of `√n(ρ̂ − ρ)` together with a flag for the
/// degenerate case where the gradient vanishes (slope product ≤ 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variance {
    pub value: f64,
    pub degenerate: bool,
}

/// `Ĝ₁' M̂⁻¹ Ĥ M̂⁻¹ Ĝ₁`.
pub fn variance_rho(parts: &SandwichParts, slope_yx: f64, slope_xy: f64) -> Result<Variance> {
    if !(slope_yx * slope_xy > 0.0) {
        return Ok(Variance { value: 0.0, degenerate: true });
    }
    let minv = invert_m(&parts.m_mat)?;
    let a = minv * parts.g1;
    let value = (a.transpose() * parts.h_mat * a)[(0, 0)].max(0.0);
    Ok(Variance { value, degenerate: value == 0.0 })
}

/// Standard normal quantile `z` with `P(|Z| ≤ z) = level`.
pub fn z_two_sided(level: f64) -> f64 {
    normal::inv_cdf(1.0 - 0.5 * (1.0 - level))
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiResult {
    pub tau: Tau,
    pub rho_hat: f64,
    pub se: f64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub p_value: f64,
}

/// Confidence interval and p-value for `ρ_τ = 0` from a fitted level.
pub fn ci_from_level(sample: &BivariateSample, level_fit: &LevelFit, level: f64) -> Result<CiResult> {
    check_level(level)?;
    let est = level_fit.estimate();
    if est.clipped {
        return Err(Error::DegenerateVariance(format!(
            "slope product is negative at tau {}; the estimate was clipped to 0",
            level_fit.tau
        )));
    }
    let parts = SandwichParts::from_level(sample, level_fit)?;
    let var = variance_rho(&parts, est.slope_yx, est.slope_xy)?;
    let se = (var.value / sample.len() as f64).sqrt();
    if var.degenerate || !(se > 0.0) || !se.is_finite() {
        return Err(Error::DegenerateVariance(format!(
            "standard error is {se} at tau {}",
            level_fit.tau
        )));
    }
    let z = z_two_sided(level);
    Ok(CiResult {
        tau: level_fit.tau,
        rho_hat: est.rho_hat,
        se,
        level,
        lower: est.rho_hat - z * se,
        upper: est.rho_hat + z * se,
        p_value: 2.0 * normal::cdf(-est.rho_hat.abs() / se),
    })
}

/// `(1 − α)` confidence interval for `ρ_τ`.
pub fn confidence_interval(
    sample: &BivariateSample,
    tau: Tau,
    level: f64,
    method: DensityMethod,
) -> Result<CiResult> {
    check_level(level)?;
    let fit = fit_levels(sample, &[tau], method)?;
    ci_from_level(sample, &fit[0], level)
}

/// Ingredients of the two-τ sandwich.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTauParts {
    /// `V₀`: Gram matrix of the stacked scores at τ₁ and τ₂.
    pub h8: Matrix8,
    /// `V₁`: block diagonal of the two information matrices.
    pub m8: Matrix8,
    pub g2: Vector8,
}

impl TwoTauParts {
    pub fn from_levels(sample: &BivariateSample, l1: &LevelFit, l2: &LevelFit) -> Result<Self> {
        let d1 = score_vectors(sample, &l1.yx, &l1.xy);
        let d2 = score_vectors(sample, &l2.yx, &l2.xy);
        let mut h8 = Matrix8::zeros();
        h8.fixed_view_mut::<4, 4>(0, 0).copy_from(&h_hat(&d1, &d1));
        h8.fixed_view_mut::<4, 4>(0, 4).copy_from(&h_hat(&d1, &d2));
        h8.fixed_view_mut::<4, 4>(4, 0).copy_from(&h_hat(&d2, &d1));
        h8.fixed_view_mut::<4, 4>(4, 4).copy_from(&h_hat(&d2, &d2));
        let mut m8 = Matrix8::zeros();
        m8.fixed_view_mut::<4, 4>(0, 0).copy_from(&m_hat(sample, &l1.dens)?);
        m8.fixed_view_mut::<4, 4>(4, 4).copy_from(&m_hat(sample, &l2.dens)?);
        let g = g2(l1.yx.slope, l1.xy.slope, l2.yx.slope, l2.xy.slope);
        Ok(TwoTauParts { h8, m8, g2: g })
    }
}

/// `Ĝ₂' V₁⁻¹ V₀ V₁⁻¹ Ĝ₂`, flagged degenerate when any slope product is ≤ 0.
pub fn two_tau_variance_from(parts: &TwoTauParts, slopes: [f64; 4]) -> Result<Variance> {
    if !(slopes[0] * slopes[1] > 0.0 && slopes[2] * slopes[3] > 0.0) {
        return Ok(Variance { value: 0.0, degenerate: true });
    }
    let m1 = invert_m(&parts.m8.fixed_view::<4, 4>(0, 0).into_owned())?;
    let m2 = invert_m(&parts.m8.fixed_view::<4, 4>(4, 4).into_owned())?;
    let mut a = Vector8::zeros();
    a.fixed_rows_mut::<4>(0).copy_from(&(m1 * parts.g2.fixed_rows::<4>(0)));
    a.fixed_rows_mut::<4>(4).copy_from(&(m2 * parts.g2.fixed_rows::<4>(4)));
    let value = (a.transpose() * parts.h8 * a)[(0, 0)].max(0.0);
    Ok(Variance { value, degenerate: value == 0.0 })
}

/// Asymptotic variance of `√n(ρ̂_{τ₁} − ρ̂_{τ₂})`.
pub fn two_tau_variance(
    sample: &BivariateSample,
    tau1: Tau,
    tau2: Tau,
    method: DensityMethod,
) -> Result<Variance> {
    let fits = fit_levels(sample, &[tau1, tau2], method)?;
    let parts = TwoTauParts::from_levels(sample, &fits[0], &fits[1])?;
    two_tau_variance_from(&parts, level_slopes(&fits[0], &fits[1]))
}

fn level_slopes(l1: &LevelFit, l2: &LevelFit) -> [f64; 4] {
    [l1.yx.slope, l1.xy.slope, l2.yx.slope, l2.xy.slope]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TailKind,
    pub tau: Tau,
    pub estimate: f64,
    pub se: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

impl TestResult {
    /// Two-sided rejection at `level` (e.g. 0.05).
    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// t test of `ρ_{τ₁} − ρ_{τ₂} = 0` from two fitted levels.
pub fn difference_test(
    sample: &BivariateSample,
    kind: TailKind,
    l1: &LevelFit,
    l2: &LevelFit,
) -> Result<TestResult> {
    if l1.tau == l2.tau {
        return Err(Error::DegenerateVariance(format!(
            "both levels equal {}; the difference is identically 0",
            l1.tau
        )));
    }
    let (e1, e2) = (l1.estimate(), l2.estimate());
    if e1.clipped || e2.clipped {
        return Err(Error::DegenerateVariance(format!(
            "estimate clipped at tau {}",
            if e1.clipped { l1.tau } else { l2.tau }
        )));
    }
    let parts = TwoTauParts::from_levels(sample, l1, l2)?;
    let var = two_tau_variance_from(&parts, level_slopes(l1, l2))?;
    let se = (var.value / sample.len() as f64).sqrt();
    if var.degenerate || !(se > 0.0) || !se.is_finite() {
        return Err(Error::DegenerateVariance(format!(
            "standard error of the difference between tau {} and {} is {se}",
            l1.tau, l2.tau
        )));
    }
    let estimate = e1.rho_hat - e2.rho_hat;
    let t_stat = estimate / se;
    Ok(TestResult {
        kind,
        tau: l1.tau,
        estimate,
        se,
        t_stat,
        p_value: 2.0 * normal::cdf(-t_stat.abs()),
    })
}

/// Levels needed for both tail tests at `tau`: `[τ, 0.5, 1 − τ]`.
pub fn tail_test_levels(tau: Tau) -> Result<[Tau; 3]> {
    Ok([tau, TailKind::D.partner(tau)?, TailKind::A.partner(tau)?])
}

/// `t^D` and `t^A` from the fitted levels `[τ, 0.5, 1 − τ]`.
pub fn tail_tests_from(
    sample: &BivariateSample,
    levels: &[LevelFit; 3],
) -> (Result<TestResult>, Result<TestResult>) {
    (
        difference_test(sample, TailKind::D, &levels[0], &levels[1]),
        difference_test(sample, TailKind::A, &levels[0], &levels[2]),
    )
}

/// Tail dependence (`τ` vs 0.5) and tail asymmetry (`τ` vs `1 − τ`) tests.
pub fn tail_tests(
    sample: &BivariateSample,
    tau: Tau,
    method: DensityMethod,
) -> Result<(TestResult, TestResult)> {
    let taus = tail_test_levels(tau)?;
    let fits = fit_levels(sample, &taus, method)?;
    let levels: [LevelFit; 3] = fits.try_into().expect("three levels");
    let (d, a) = tail_tests_from(sample, &levels);
    Ok((d?, a?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{draw_bivariate_normal, RngStream};

    fn tau(v: f64) -> Tau {
        Tau::new(v).unwrap()
    }

    #[test]
    fn g1_equal_slopes() {
        let g = g1(0.7, 0.7);
        assert_eq!(g, Vector4::new(0.0, 0.5, 0.0, 0.5));
        assert_eq!(g1(0.5, -0.2), Vector4::zeros());
    }

    #[test]
    fn z_values() {
        assert!((z_two_sided(0.9) - 1.644_853_626_951_472_7).abs() < 1e-12);
        assert!((z_two_sided(0.95) - 1.959_963_984_540_054_2).abs() < 1e-12);
    }

    #[test]
    fn block_guard() {
        assert!(invert_block(Matrix2::zeros(), "t").is_err());
        assert!(invert_block(Matrix2::new(1.0, 1.0, 1.0, 1.0), "t").is_err());
        let inv = invert_block(Matrix2::new(2.0, 0.5, 0.5, 1.0), "t").unwrap();
        let prod = inv * Matrix2::new(2.0, 0.5, 0.5, 1.0);
        assert!((prod - Matrix2::identity()).norm() < 1e-14);
    }

    #[test]
    fn zero_scores_give_zero_h() {
        let z = vec![[0.0; 4]; 10];
        assert_eq!(h_hat(&z, &z), Matrix4::zeros());
    }

    #[test]
    fn unit_and_zero_densities() {
        let s = draw_bivariate_normal(0.5, 100, &RngStream::new(8, 0)).unwrap();
        let ones = DensityValues {
            method: DensityMethod::Bh,
            f_yx: vec![1.0; 100],
            f_xy: vec![1.0; 100],
        };
        let m = m_hat(&s, &ones).unwrap();
        let mx: f64 = s.xs().iter().sum::<f64>() / 100.0;
        let mxx: f64 = s.xs().iter().map(|x| x * x).sum::<f64>() / 100.0;
        assert!((m[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((m[(0, 1)] - mx).abs() < 1e-15 && (m[(1, 1)] - mxx).abs() < 1e-14);
        assert_eq!(m[(0, 2)], 0.0);
        let zeros = DensityValues {
            method: DensityMethod::Bh,
            f_yx: vec![0.0; 100],
            f_xy: vec![1.0; 100],
        };
        assert!(matches!(m_hat(&s, &zeros), Err(Error::SingularInformation(_))));
    }

    #[test]
    fn ci_contains_estimate() {
        let s = draw_bivariate_normal(0.5, 400, &RngStream::new(8, 1)).unwrap();
        for method in [DensityMethod::Bh, DensityMethod::Hk] {
            let ci = confidence_interval(&s, tau(0.3), 0.9, method).unwrap();
            assert!(ci.lower <= ci.rho_hat && ci.rho_hat <= ci.upper);
            let z = z_two_sided(0.9);
            assert!(((ci.upper - ci.lower) - 2.0 * z * ci.se).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&ci.p_value));
        }
    }

    #[test]
    fn same_tau_difference_is_degenerate() {
        let s = draw_bivariate_normal(0.5, 300, &RngStream::new(8, 2)).unwrap();
        let fits = fit_levels(&s, &[Tau::MEDIAN, Tau::MEDIAN], DensityMethod::Bh).unwrap();
        let r = difference_test(&s, TailKind::D, &fits[0], &fits[1]);
        assert!(matches!(r, Err(Error::DegenerateVariance(_))));
        assert!(matches!(tail_tests(&s, tau(0.6), DensityMethod::Bh), Err(Error::Parameter(_))));
    }
}
