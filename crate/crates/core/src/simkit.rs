//! Monte-Carlo campaigns: true-value approximation, CI coverage and the
//! size/power of the tail tests.
//!
//! Replication `r` draws its sample from stream `r` of the campaign seed, so
//! results do not depend on the number of worker threads. Replications run
//! in parallel and are aggregated in stream order.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conddens::DensityMethod;
use crate::error::{Error, Result};
use crate::inference::{ci_from_level, difference_test, fit_levels, LevelFit};
use crate::qcorr::{qcorr_from_fits, TailKind};
use crate::quantreg::{fit_both, Tau};
use crate::sampling::{DgpKind, DgpSpec, RngStream};

/// One Monte-Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub dgp: DgpSpec,
    pub n: usize,
    pub taus: Vec<Tau>,
    /// Number of replications `M`.
    pub reps: usize,
    /// Confidence level of the intervals.
    pub level: f64,
    /// Significance level of the tail tests.
    pub test_level: f64,
    pub density_method: DensityMethod,
    pub seed: u64,
}

impl CampaignSpec {
    pub fn new(dgp: DgpSpec, n: usize, taus: Vec<Tau>, reps: usize) -> Self {
        CampaignSpec {
            dgp,
            n,
            taus,
            reps,
            level: 0.9,
            test_level: 0.05,
            density_method: DensityMethod::Bh,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.reps == 0 {
            return Err(Error::Parameter("reps must be at least 1".into()));
        }
        if self.taus.is_empty() {
            return Err(Error::Parameter("at least one tau is required".into()));
        }
        if self.n < 3 {
            return Err(Error::Parameter(format!("n must be at least 3, got {}", self.n)));
        }
        for (name, v) in [("level", self.level), ("test level", self.test_level)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Parameter(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Aggregates at one τ. Every fraction is out of `reps`; replications that
/// failed are counted in the matching error rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub tau: Tau,
    pub true_value: Option<f64>,
    pub mean_rho_hat: Option<f64>,
    pub clipped_rate: f64,
    pub fit_error_rate: f64,
    pub coverage: Option<f64>,
    pub non_coverage: Option<f64>,
    pub ci_error_rate: Option<f64>,
    pub mean_ci_length: Option<f64>,
    pub rejection_rate_d: Option<f64>,
    pub test_error_rate_d: Option<f64>,
    pub rejection_rate_a: Option<f64>,
    pub test_error_rate_a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub dgp: String,
    pub n: usize,
    pub reps: usize,
    pub level: f64,
    pub test_level: f64,
    pub density_method: DensityMethod,
    pub seed: u64,
    pub rows: Vec<McRow>,
    pub runtime_seconds: f64,
}

impl McReport {
    pub fn row(&self, tau: f64) -> Option<&McRow> {
        self.rows.iter().find(|r| (r.tau.value() - tau).abs() < 1e-12)
    }

    /// The report with the timing zeroed, for reproducibility comparisons.
    pub fn without_runtime(&self) -> McReport {
        McReport { runtime_seconds: 0.0, ..self.clone() }
    }

    /// One CSV row per τ.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Flat<'a> {
            dgp: &'a str,
            n: usize,
            method: &'a str,
            reps: usize,
            tau: f64,
            true_value: Option<f64>,
            mean_rho_hat: Option<f64>,
            coverage: Option<f64>,
            non_coverage: Option<f64>,
            ci_error_rate: Option<f64>,
            mean_ci_length: Option<f64>,
            rejection_rate_d: Option<f64>,
            test_error_rate_d: Option<f64>,
            rejection_rate_a: Option<f64>,
            test_error_rate_a: Option<f64>,
            clipped_rate: f64,
            fit_error_rate: f64,
        }
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(Flat {
                dgp: &self.dgp,
                n: self.n,
                method: self.density_method.label(),
                reps: self.reps,
                tau: r.tau.value(),
                true_value: r.true_value,
                mean_rho_hat: r.mean_rho_hat,
                coverage: r.coverage,
                non_coverage: r.non_coverage,
                ci_error_rate: r.ci_error_rate,
                mean_ci_length: r.mean_ci_length,
                rejection_rate_d: r.rejection_rate_d,
                test_error_rate_d: r.test_error_rate_d,
                rejection_rate_a: r.rejection_rate_a,
                test_error_rate_a: r.test_error_rate_a,
                clipped_rate: r.clipped_rate,
                fit_error_rate: r.fit_error_rate,
            })
            .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned text table with percentages, in the layout of a coverage /
    /// rejection-rate summary.
    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        let num = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut s = format!(
            "dgp={} n={} reps={} density={} level={} test_level={} seed={}\n",
            self.dgp,
            self.n,
            self.reps,
            self.density_method.label(),
            self.level,
            self.test_level,
            self.seed
        );
        s.push_str(&format!(
            "{:>6} {:>8} {:>8} {:>9} {:>8} {:>7} {:>7} {:>8} {:>7}\n",
            "tau", "true", "mean", "cover%", "length", "rejD%", "rejA%", "clip%", "err%"
        ));
        for r in &self.rows {
            let err = r.fit_error_rate.max(r.ci_error_rate.unwrap_or(0.0));
            s.push_str(&format!(
                "{:>6} {:>8} {:>8} {:>9} {:>8} {:>7} {:>7} {:>8} {:>7}\n",
                r.tau.value(),
                num(r.true_value),
                num(r.mean_rho_hat),
                pct(r.coverage),
                num(r.mean_ci_length),
                pct(r.rejection_rate_d),
                pct(r.rejection_rate_a),
                pct(Some(r.clipped_rate)),
                pct(Some(err)),
            ));
        }
        s
    }
}

/// Monte-Carlo approximation of `ρ_τ` by averaging estimates from large
/// samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueValueEstimate {
    pub tau: Tau,
    pub value: f64,
    pub reps: usize,
    pub n_big: usize,
    /// Standard deviation over replications divided by `√reps`.
    pub mc_se: f64,
}

pub const DEFAULT_TRUTH_REPS: usize = 20;
pub const DEFAULT_TRUTH_N: usize = 100_000;

/// Approximates `ρ_τ` at several levels, reusing each large sample across
/// levels. Replication `r` uses stream `r` of `seed`.
pub fn approximate_true_rho_grid(
    dgp: &DgpSpec,
    taus: &[Tau],
    reps: usize,
    n_big: usize,
    seed: u64,
) -> Result<Vec<TrueValueEstimate>> {
    dgp.validate()?;
    if reps == 0 {
        return Err(Error::Parameter("reps must be at least 1".into()));
    }
    let per_rep: Vec<Vec<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let sample = dgp.draw(n_big, &RngStream::new(seed, r))?;
            taus.iter()
                .map(|&t| {
                    let (yx, xy) = fit_both(&sample, t)?;
                    Ok(qcorr_from_fits(&yx, &xy).rho_hat)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(taus
        .iter()
        .enumerate()
        .map(|(k, &tau)| {
            let vals: Vec<f64> = per_rep.iter().map(|v| v[k]).collect();
            let m = reps as f64;
            let value = vals.iter().sum::<f64>() / m;
            let mc_se = if reps > 1 {
                let var = vals.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (m - 1.0);
                (var / m).sqrt()
            } else {
                0.0
            };
            TrueValueEstimate { tau, value, reps, n_big, mc_se }
        })
        .collect())
}

pub fn approximate_true_rho(
    dgp: &DgpSpec,
    tau: Tau,
    reps: usize,
    n_big: usize,
    seed: u64,
) -> Result<TrueValueEstimate> {
    Ok(approximate_true_rho_grid(dgp, &[tau], reps, n_big, seed)?.remove(0))
}

/// True values for a coverage campaign: exact `ρ` for the normal DGP,
/// otherwise a Monte-Carlo approximation.
pub fn true_values(
    dgp: &DgpSpec,
    taus: &[Tau],
    reps: usize,
    n_big: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if dgp.kind == DgpKind::Normal {
        dgp.validate()?;
        return Ok(vec![dgp.rho; taus.len()]);
    }
    Ok(approximate_true_rho_grid(dgp, taus, reps, n_big, seed)?
        .into_iter()
        .map(|t| t.value)
        .collect())
}

/// Outcome of one replication at one τ.
#[derive(Debug, Clone, Default)]
struct Cell {
    rho_hat: Option<f64>,
    clipped: bool,
    /// `Some(Ok((lower, upper)))`, `Some(Err)` on failure, `None` if not run.
    ci: Option<std::result::Result<(f64, f64), ()>>,
    test_d: Option<std::result::Result<bool, ()>>,
    test_a: Option<std::result::Result<bool, ()>>,
}

fn needed_levels(taus: &[Tau], tests: bool) -> Vec<Tau> {
    let mut out: Vec<Tau> = Vec::new();
    let mut push = |t: Tau| {
        if !out.contains(&t) {
            out.push(t);
        }
    };
    for &t in taus {
        push(t);
        if tests {
            push(Tau::MEDIAN);
            if t.value() < 0.5 {
                push(t.complement());
            }
        }
    }
    out
}

fn run_replication(spec: &CampaignSpec, rep: u64, coverage: bool, tests: bool) -> Vec<Cell> {
    let failed = || {
        spec.taus
            .iter()
            .map(|t| Cell {
                ci: coverage.then_some(Err(())),
                test_d: tests.then_some(Err(())),
                test_a: (tests && t.value() < 0.5).then_some(Err(())),
                ..Cell::default()
            })
            .collect()
    };
    let Ok(sample) = spec.dgp.draw(spec.n, &RngStream::new(spec.seed, rep)) else {
        return failed();
    };
    let levels = needed_levels(&spec.taus, tests);
    let Ok(fits) = fit_levels(&sample, &levels, spec.density_method) else {
        return failed();
    };
    let find = |t: Tau| -> &LevelFit { &fits[levels.iter().position(|l| *l == t).unwrap()] };
    spec.taus
        .iter()
        .map(|&t| {
            let lf = find(t);
            let est = lf.estimate();
            let mut cell =
                Cell { rho_hat: Some(est.rho_hat), clipped: est.clipped, ..Cell::default() };
            if coverage {
                cell.ci = Some(
                    ci_from_level(&sample, lf, spec.level)
                        .map(|c| (c.lower, c.upper))
                        .map_err(|_| ()),
                );
            }
            if tests {
                let reject = |kind: TailKind, partner: Tau| {
                    difference_test(&sample, kind, lf, find(partner))
                        .map(|r| r.rejects(spec.test_level))
                        .map_err(|_| ())
                };
                cell.test_d = Some(reject(TailKind::D, Tau::MEDIAN));
                if t.value() < 0.5 {
                    cell.test_a = Some(reject(TailKind::A, t.complement()));
                }
            }
            cell
        })
        .collect()
}

fn run(spec: &CampaignSpec, truth: Option<&[f64]>, tests: bool) -> Result<McReport> {
    spec.validate()?;
    if let Some(tv) = truth {
        if tv.len() != spec.taus.len() {
            return Err(Error::Parameter(format!(
                "{} true values supplied for {} tau levels",
                tv.len(),
                spec.taus.len()
            )));
        }
    }
    let start = Instant::now();
    let cells: Vec<Vec<Cell>> = (0..spec.reps as u64)
        .into_par_iter()
        .map(|r| run_replication(spec, r, truth.is_some(), tests))
        .collect();
    let m = spec.reps as f64;
    let rows = spec
        .taus
        .iter()
        .enumerate()
        .map(|(k, &tau)| {
            let col: Vec<&Cell> = cells.iter().map(|c| &c[k]).collect();
            let rhos: Vec<f64> = col.iter().filter_map(|c| c.rho_hat).collect();
            let frac = |count: usize| count as f64 / m;
            let mut row = McRow {
                tau,
                true_value: truth.map(|t| t[k]),
                mean_rho_hat: (!rhos.is_empty())
                    .then(|| rhos.iter().sum::<f64>() / rhos.len() as f64),
                clipped_rate: frac(col.iter().filter(|c| c.clipped).count()),
                fit_error_rate: frac(col.iter().filter(|c| c.rho_hat.is_none()).count()),
                coverage: None,
                non_coverage: None,
                ci_error_rate: None,
                mean_ci_length: None,
                rejection_rate_d: None,
                test_error_rate_d: None,
                rejection_rate_a: None,
                test_error_rate_a: None,
            };
            if let Some(tv) = truth {
                let target = tv[k];
                let ok: Vec<(f64, f64)> =
                    col.iter().filter_map(|c| c.ci.and_then(|r| r.ok())).collect();
                let covered = ok.iter().filter(|(lo, hi)| *lo < target && target < *hi).count();
                row.coverage = Some(frac(covered));
                row.non_coverage = Some(frac(ok.len() - covered));
                row.ci_error_rate = Some(frac(spec.reps - ok.len()));
                row.mean_ci_length = (!ok.is_empty())
                    .then(|| ok.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / ok.len() as f64);
            }
            let rates = |get: fn(&Cell) -> Option<std::result::Result<bool, ()>>| {
                let run: Vec<_> = col.iter().filter_map(|c| get(c)).collect();
                if run.is_empty() {
                    return (None, None);
                }
                let rejected = run.iter().filter(|r| matches!(r, Ok(true))).count();
                let errors = run.iter().filter(|r| r.is_err()).count();
                (Some(frac(rejected)), Some(frac(errors)))
            };
            (row.rejection_rate_d, row.test_error_rate_d) = rates(|c| c.test_d);
            (row.rejection_rate_a, row.test_error_rate_a) = rates(|c| c.test_a);
            row
        })
        .collect();
    Ok(McReport {
        dgp: spec.dgp.kind.label().to_string(),
        n: spec.n,
        reps: spec.reps,
        level: spec.level,
        test_level: spec.test_level,
        density_method: spec.density_method,
        seed: spec.seed,
        rows,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Coverage of the confidence intervals for the supplied true values (one
/// per τ), with mean interval lengths.
pub fn run_coverage_campaign(spec: &CampaignSpec, true_values: &[f64]) -> Result<McReport> {
    run(spec, Some(true_values), false)
}

/// Rejection rates of `t^D` (all τ) and `t^A` (τ < 0.5).
pub fn run_test_campaign(spec: &CampaignSpec) -> Result<McReport> {
    run(spec, None, true)
}

/// Coverage and tail tests from the same replications.
pub fn run_full_campaign(spec: &CampaignSpec, true_values: &[f64]) -> Result<McReport> {
    run(spec, Some(true_values), true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(reps: usize) -> CampaignSpec {
        let mut s = CampaignSpec::new(
            DgpSpec::new(DgpKind::Normal),
            120,
            vec![Tau::new(0.2).unwrap(), Tau::MEDIAN],
            reps,
        );
        s.seed = 11;
        s
    }

    #[test]
    fn fractions_add_up() {
        let s = spec(12);
        let rep = run_full_campaign(&s, &[0.5, 0.5]).unwrap();
        for r in &rep.rows {
            let total = r.coverage.unwrap() + r.non_coverage.unwrap() + r.ci_error_rate.unwrap();
            assert!((total - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&r.rejection_rate_d.unwrap()));
        }
        assert!(rep.row(0.2).unwrap().rejection_rate_a.is_some());
        assert!(rep.row(0.5).unwrap().rejection_rate_a.is_none());
    }

    #[test]
    fn replay_is_identical() {
        let s = spec(6);
        let a = run_full_campaign(&s, &[0.5, 0.5]).unwrap();
        let b = run_full_campaign(&s, &[0.5, 0.5]).unwrap();
        assert_eq!(a.without_runtime(), b.without_runtime());
    }

    #[test]
    fn single_replication_fractions_are_binary() {
        let rep = run_coverage_campaign(&spec(1), &[0.5, 0.5]).unwrap();
        for r in &rep.rows {
            let c = r.coverage.unwrap();
            assert!(c == 0.0 || c == 1.0);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(0);
        assert!(matches!(run_test_campaign(&s), Err(Error::Parameter(_))));
        s.reps = 2;
        s.taus.clear();
        assert!(matches!(run_test_campaign(&s), Err(Error::Parameter(_))));
        let s = spec(2);
        assert!(run_coverage_campaign(&s, &[0.5]).is_err());
    }

    #[test]
    fn normal_truth_is_exact() {
        let dgp = DgpSpec::new(DgpKind::Normal);
        let tv = true_values(&dgp, &[Tau::MEDIAN], 1, 10, 0).unwrap();
        assert_eq!(tv, vec![dgp.rho]);
    }
}
