//! Quantile correlation and the tail measures built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantreg::{fit_both, QuantRegFit, Tau};
use crate::sampling::{mean, pearson, BivariateSample};

/// Point estimate `ρ̂_τ` with the two slopes it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QCorrEstimate {
    pub tau: Tau,
    pub rho_hat: f64,
    /// Slope of the τ-quantile line of Y on X.
    pub slope_yx: f64,
    /// Slope of the τ-quantile line of X on Y.
    pub slope_xy: f64,
    /// The slope product was negative and `rho_hat` was set to 0.
    pub clipped: bool,
    /// `|rho_hat| > 1`; reported as-is.
    pub exceeds_one: bool,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Combines two slopes into `sign(β₂.₁)·√(β₂.₁·β₁.₂)`, or 0 when their
/// product is negative.
pub fn combine_slopes(tau: Tau, slope_yx: f64, slope_xy: f64) -> QCorrEstimate {
    let product = slope_yx * slope_xy;
    let (rho_hat, clipped) =
        if product >= 0.0 { (sign(slope_yx) * product.sqrt(), false) } else { (0.0, true) };
    QCorrEstimate { tau, rho_hat, slope_yx, slope_xy, clipped, exceeds_one: rho_hat.abs() > 1.0 }
}

/// `ρ̂_τ` from already fitted lines (Y on X, X on Y).
pub fn qcorr_from_fits(yx: &QuantRegFit, xy: &QuantRegFit) -> QCorrEstimate {
    combine_slopes(yx.tau, yx.slope, xy.slope)
}

/// Sample τ-quantile correlation.
pub fn quantile_correlation(sample: &BivariateSample, tau: Tau) -> Result<QCorrEstimate> {
    let (yx, xy) = fit_both(sample, tau)?;
    Ok(qcorr_from_fits(&yx, &xy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TailKind {
    /// Dependence: `ρ_τ − ρ_{0.5}`.
    D,
    /// Asymmetry: `ρ_τ − ρ_{1−τ}`, τ < 0.5.
    A,
}

impl TailKind {
    /// The reference level paired with `tau`.
    pub fn partner(&self, tau: Tau) -> Result<Tau> {
        match self {
            TailKind::D => Ok(Tau::MEDIAN),
            TailKind::A => {
                if tau.value() >= 0.5 {
                    Err(Error::Parameter(format!(
                        "tail asymmetry needs tau < 0.5, got {tau}"
                    )))
                } else {
                    Ok(tau.complement())
                }
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TailKind::D => "D",
            TailKind::A => "A",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMeasure {
    pub kind: TailKind,
    pub tau: Tau,
    pub value: f64,
}

fn tail_measure(sample: &BivariateSample, tau: Tau, kind: TailKind) -> Result<TailMeasure> {
    let partner = kind.partner(tau)?;
    let at_tau = quantile_correlation(sample, tau)?;
    let at_partner = quantile_correlation(sample, partner)?;
    Ok(TailMeasure { kind, tau, value: at_tau.rho_hat - at_partner.rho_hat })
}

/// `ρ̂_τ − ρ̂_{0.5}`.
pub fn tail_dependence_measure(sample: &BivariateSample, tau: Tau) -> Result<TailMeasure> {
    tail_measure(sample, tau, TailKind::D)
}

/// `ρ̂_τ − ρ̂_{1−τ}` for τ < 0.5.
pub fn tail_asymmetry_measure(sample: &BivariateSample, tau: Tau) -> Result<TailMeasure> {
    tail_measure(sample, tau, TailKind::A)
}

/// Which variable is thresholded in the indicator correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LiDirection {
    /// `corr(I(x > q̂_τ^X), y)`.
    XY,
    /// `corr(I(y > q̂_τ^Y), x)`.
    YX,
}

/// Sample quantile by linear interpolation of order statistics (type 7).
pub fn type7_quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    match sorted.get(lo + 1) {
        Some(&next) => sorted[lo] + (h - lo as f64) * (next - sorted[lo]),
        None => sorted[lo],
    }
}

/// Slopes of the two least-squares regressions between an indicator and
/// the other variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSlopes {
    /// Of the variable on the indicator: difference of group means.
    pub on_indicator: f64,
    /// Of the indicator on the variable: `cov(I, ·)/var(·)`.
    pub indicator_on: f64,
}

fn indicator_columns(
    sample: &BivariateSample,
    tau: Tau,
    direction: LiDirection,
) -> Result<(Vec<f64>, &[f64])> {
    let n = sample.len();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    let (thresholded, other) = match direction {
        LiDirection::XY => (sample.xs(), sample.ys()),
        LiDirection::YX => (sample.ys(), sample.xs()),
    };
    let q = type7_quantile(thresholded, tau.value());
    let ind: Vec<f64> = thresholded.iter().map(|&v| if v > q { 1.0 } else { 0.0 }).collect();
    let ones = ind.iter().filter(|&&v| v > 0.0).count();
    if ones == 0 || ones == n {
        return Err(Error::UndefinedCorrelation(format!(
            "indicator at tau {tau} is constant ({ones} of {n} above the quantile)"
        )));
    }
    Ok((ind, other))
}

/// Pearson correlation between the τ-quantile exceedance indicator of one
/// variable and the other variable.
pub fn li_indicator_correlation(
    sample: &BivariateSample,
    tau: Tau,
    direction: LiDirection,
) -> Result<f64> {
    let (ind, other) = indicator_columns(sample, tau, direction)?;
    pearson(&ind, other)
        .ok_or_else(|| Error::UndefinedCorrelation("zero variance in the paired variable".into()))
}

/// Least-squares slopes behind the indicator correlation; their signed
/// geometric mean equals [`li_indicator_correlation`].
pub fn li_indicator_slopes(
    sample: &BivariateSample,
    tau: Tau,
    direction: LiDirection,
) -> Result<IndicatorSlopes> {
    let (ind, other) = indicator_columns(sample, tau, direction)?;
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0.0, 0.0, 0.0);
    for (i, v) in ind.iter().zip(other) {
        if *i > 0.0 {
            s1 += v;
            n1 += 1.0;
        } else {
            s0 += v;
            n0 += 1.0;
        }
    }
    let mi = mean(&ind);
    let mo = mean(other);
    let cov: f64 = ind.iter().zip(other).map(|(i, v)| (i - mi) * (v - mo)).sum();
    let var: f64 = other.iter().map(|v| (v - mo).powi(2)).sum();
    if var == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance in the paired variable".into()));
    }
    Ok(IndicatorSlopes { on_indicator: s1 / n1 - s0 / n0, indicator_on: cov / var })
}

/// Sample analogue of `Δ_τ` from the residuals of both fitted lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaTau {
    pub tau: Tau,
    pub value: f64,
}

/// `mean(e₁.₂⁻)·mean(e₂.₁⁻) − mean(e₁.₂⁺)·mean(e₂.₁⁺)` with `e⁻ = e·I(e<0)`
/// and `e⁺ = e·I(e≥0)`; `e₂.₁` are residuals of Y on X, `e₁.₂` of X on Y.
pub fn delta_from_fits(sample: &BivariateSample, yx: &QuantRegFit, xy: &QuantRegFit) -> DeltaTau {
    let parts = |e: Vec<f64>| {
        let n = e.len() as f64;
        let neg: f64 = e.iter().filter(|v| **v < 0.0).sum();
        let pos: f64 = e.iter().filter(|v| **v >= 0.0).sum();
        (neg / n, pos / n)
    };
    let (neg21, pos21) = parts(yx.residuals(sample));
    let (neg12, pos12) = parts(xy.residuals(sample));
    DeltaTau { tau: yx.tau, value: neg12 * neg21 - pos12 * pos21 }
}

pub fn delta_tau_diagnostic(sample: &BivariateSample, tau: Tau) -> Result<DeltaTau> {
    let (yx, xy) = fit_both(sample, tau)?;
    Ok(delta_from_fits(sample, &yx, &xy))
}
