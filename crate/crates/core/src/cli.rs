//! Command-line front end: `estimate`, `tailtest`, `simulate`, `sample`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::conddens::DensityMethod;
use crate::error::{Error, Result};
use crate::inference::{ci_from_level, fit_levels, tail_test_levels, tail_tests_from, LevelFit};
use crate::qcorr::{
    li_indicator_correlation, li_indicator_slopes, qcorr_from_fits, LiDirection, TailKind,
};
use crate::quantreg::{fit_both, Tau};
use crate::sampling::{BivariateSample, DgpKind, DgpSpec, RngStream};
use crate::simkit::{
    run_coverage_campaign, run_full_campaign, run_test_campaign, true_values, CampaignSpec,
    McReport, DEFAULT_TRUTH_N, DEFAULT_TRUTH_REPS,
};

#[derive(Debug, Parser)]
#[command(name = "tailcorr", version, about = "Quantile correlation estimation and tail tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantile correlations with standard errors and confidence intervals.
    Estimate(EstimateArgs),
    /// Tail dependence and tail asymmetry tests at levels below 0.5.
    Tailtest(TailtestArgs),
    /// Monte-Carlo coverage and size/power campaign.
    Simulate(SimulateArgs),
    /// Write a sample from a data-generating process as CSV.
    Sample(SampleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DensityArg {
    Bh,
    Hk,
}

impl From<DensityArg> for DensityMethod {
    fn from(d: DensityArg) -> Self {
        match d {
            DensityArg::Bh => DensityMethod::Bh,
            DensityArg::Hk => DensityMethod::Hk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DgpArg {
    Normal,
    T10,
    Rocket,
    Cubic,
    Garch,
}

impl From<DgpArg> for DgpKind {
    fn from(d: DgpArg) -> Self {
        match d {
            DgpArg::Normal => DgpKind::Normal,
            DgpArg::T10 => DgpKind::T10,
            DgpArg::Rocket => DgpKind::Rocket,
            DgpArg::Cubic => DgpKind::Cubic,
            DgpArg::Garch => DgpKind::Garch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CampaignMode {
    Coverage,
    Tests,
    Both,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row and two numeric columns (x, y).
    pub input: PathBuf,
    /// Mark the data as a dependent (e.g. GARCH-type) series.
    #[arg(long)]
    pub time_series: bool,
    #[arg(long, value_enum, default_value = "bh")]
    pub density: DensityArg,
    #[arg(long, value_enum, default_value = "table")]
    pub output: OutputFormat,
    /// Write the report to a file instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Quantile level; repeatable. Defaults to 0.01, 0.02, ..., 0.99.
    #[arg(long = "tau")]
    pub taus: Vec<f64>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Add the indicator correlations in both directions.
    #[arg(long)]
    pub compare_li: bool,
    /// Report point estimates only (no densities, standard errors or CIs).
    #[arg(long)]
    pub no_inference: bool,
}

#[derive(Debug, Args)]
pub struct TailtestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Quantile level below 0.5; repeatable. Defaults to 0.1.
    #[arg(long = "tau")]
    pub taus: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub dgp: DgpArg,
    #[arg(long)]
    pub n: usize,
    /// Quantile level; repeatable. Defaults to 0.1, 0.5, 0.9.
    #[arg(long = "tau")]
    pub taus: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, value_enum, default_value = "bh")]
    pub density: DensityArg,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Confidence level of the intervals.
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    /// Significance level of the tail tests.
    #[arg(long, default_value_t = 0.05)]
    pub test_level: f64,
    /// Correlation of the Gaussian core.
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: CampaignMode,
    /// Replications for approximating true values (non-normal processes).
    #[arg(long, default_value_t = DEFAULT_TRUTH_REPS)]
    pub truth_reps: usize,
    /// Sample size of each true-value replication.
    #[arg(long, default_value_t = DEFAULT_TRUTH_N)]
    pub truth_n: usize,
    #[arg(long, value_enum, default_value = "table")]
    pub output: OutputFormat,
    /// Directory for the CSV and table artifacts.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, value_enum)]
    pub dgp: DgpArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Reads a two-column CSV with a header row. Errors name the 1-based line.
pub fn read_sample<R: Read>(input: R) -> Result<BivariateSample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    if headers.len() != 2 {
        return Err(Error::Data {
            line: 1,
            message: format!("expected 2 columns in the header, found {}", headers.len()),
        });
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(Error::Data {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let parse = |k: usize| -> Result<f64> {
            let field = &record[k];
            if field.is_empty() {
                return Err(Error::Data { line, message: format!("missing value in column {}", k + 1) });
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Data {
                    line,
                    message: format!("non-numeric value '{field}' in column {}", k + 1),
                }),
            }
        };
        xs.push(parse(0)?);
        ys.push(parse(1)?);
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: xs.len() });
    }
    BivariateSample::new(xs, ys)
}

fn csv_error(e: csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
        _ => Error::Data { line, message: e.to_string() },
    }
}

pub fn read_sample_file(path: &Path) -> Result<BivariateSample> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_sample(std::io::BufReader::new(file))
}

/// Validates τ values and drops duplicates (first occurrence wins).
pub fn parse_taus(raw: &[f64], default: &[f64], warn: &mut dyn Write) -> Result<Vec<Tau>> {
    let source = if raw.is_empty() { default } else { raw };
    let mut out: Vec<Tau> = Vec::new();
    for &v in source {
        let t = Tau::new(v)?;
        if out.contains(&t) {
            writeln!(warn, "warning: duplicate tau {v} ignored")?;
        } else {
            out.push(t);
        }
    }
    Ok(out)
}

pub fn default_tau_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

const TIME_SERIES_NOTICE: &str = "note: time-series mode assumes linear conditional quantiles and \
martingale-difference scores (GARCH-type dependence); this cannot be checked from the sample";

fn open_output<'a>(path: &Option<PathBuf>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(stdout)),
    }
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".into(), |v| format!("{v:.prec$}"))
}

/// One line of the `estimate` report.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EstimateRow {
    pub tau: f64,
    pub rho_hat: f64,
    pub slope_yx: f64,
    pub slope_xy: f64,
    pub clipped: bool,
    pub exceeds_one: bool,
    pub se: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub p_value: Option<f64>,
    pub li_xy: Option<f64>,
    pub li_yx: Option<f64>,
    /// Slope of y on the x-indicator (difference of group means).
    pub li_xy_on_indicator: Option<f64>,
    /// Slope of the x-indicator on y.
    pub li_xy_indicator_on: Option<f64>,
    pub li_yx_on_indicator: Option<f64>,
    pub li_yx_indicator_on: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    pub level: f64,
    pub density: Option<DensityMethod>,
    pub time_series: bool,
    pub rows: Vec<EstimateRow>,
}

pub fn estimate_report(
    sample: &BivariateSample,
    taus: &[Tau],
    level: f64,
    density: Option<DensityMethod>,
    compare_li: bool,
) -> Result<EstimateReport> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("level must lie in (0, 1), got {level}")));
    }
    let levels: Option<Vec<LevelFit>> =
        density.map(|m| fit_levels(sample, taus, m)).transpose()?;
    let mut rows = Vec::with_capacity(taus.len());
    for (k, &tau) in taus.iter().enumerate() {
        let est = match &levels {
            Some(l) => l[k].estimate(),
            None => {
                let (yx, xy) = fit_both(sample, tau)?;
                qcorr_from_fits(&yx, &xy)
            }
        };
        let mut row = EstimateRow {
            tau: tau.value(),
            rho_hat: est.rho_hat,
            slope_yx: est.slope_yx,
            slope_xy: est.slope_xy,
            clipped: est.clipped,
            exceeds_one: est.exceeds_one,
            se: None,
            lower: None,
            upper: None,
            p_value: None,
            li_xy: None,
            li_yx: None,
            li_xy_on_indicator: None,
            li_xy_indicator_on: None,
            li_yx_on_indicator: None,
            li_yx_indicator_on: None,
            note: None,
        };
        if let Some(l) = &levels {
            match ci_from_level(sample, &l[k], level) {
                Ok(ci) => {
                    row.se = Some(ci.se);
                    row.lower = Some(ci.lower);
                    row.upper = Some(ci.upper);
                    row.p_value = Some(ci.p_value);
                }
                Err(e) => row.note = Some(e.to_string()),
            }
        }
        if compare_li {
            let mut li_notes = Vec::new();
            for dir in [LiDirection::XY, LiDirection::YX] {
                let value = li_indicator_correlation(sample, tau, dir);
                let slopes = li_indicator_slopes(sample, tau, dir);
                match (value, slopes) {
                    (Ok(v), Ok(s)) => {
                        let (val, on, ind) = match dir {
                            LiDirection::XY => (
                                &mut row.li_xy,
                                &mut row.li_xy_on_indicator,
                                &mut row.li_xy_indicator_on,
                            ),
                            LiDirection::YX => (
                                &mut row.li_yx,
                                &mut row.li_yx_on_indicator,
                                &mut row.li_yx_indicator_on,
                            ),
                        };
                        *val = Some(v);
                        *on = Some(s.on_indicator);
                        *ind = Some(s.indicator_on);
                    }
                    (Err(e), _) | (_, Err(e)) => li_notes.push(e.to_string()),
                }
            }
            if !li_notes.is_empty() {
                let joined = li_notes.join("; ");
                row.note = Some(match row.note.take() {
                    Some(n) => format!("{n}; {joined}"),
                    None => joined,
                });
            }
        }
        rows.push(row);
    }
    Ok(EstimateReport { n: sample.len(), level, density, time_series: false, rows })
}

fn write_estimate(report: &EstimateReport, format: OutputFormat, out: &mut dyn Write) -> Result<()> {
    match format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, report).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(out)?;
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut *out);
            for r in &report.rows {
                w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
            }
            w.flush()?;
        }
        OutputFormat::Table => {
            writeln!(out, "n={} level={}", report.n, report.level)?;
            let li = report.rows.iter().any(|r| r.li_xy.is_some() || r.li_yx.is_some());
            write!(
                out,
                "{:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
                "tau", "rho", "b_yx", "b_xy", "se", "lower", "upper", "p"
            )?;
            if li {
                write!(out, " {:>9} {:>9}", "li_xy", "li_yx")?;
            }
            writeln!(out)?;
            for r in &report.rows {
                write!(
                    out,
                    "{:>6} {:>9.4} {:>9.4} {:>9.4} {:>9} {:>9} {:>9} {:>9}",
                    r.tau,
                    r.rho_hat,
                    r.slope_yx,
                    r.slope_xy,
                    fmt_opt(r.se, 4),
                    fmt_opt(r.lower, 4),
                    fmt_opt(r.upper, 4),
                    fmt_opt(r.p_value, 4)
                )?;
                if li {
                    write!(out, " {:>9} {:>9}", fmt_opt(r.li_xy, 4), fmt_opt(r.li_yx, 4))?;
                }
                let mut flags = Vec::new();
                if r.clipped {
                    flags.push("clipped".to_string());
                }
                if r.exceeds_one {
                    flags.push("|rho|>1".to_string());
                }
                if let Some(n) = &r.note {
                    flags.push(n.clone());
                }
                if !flags.is_empty() {
                    write!(out, "  [{}]", flags.join("; "))?;
                }
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

/// One line of the `tailtest` report.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct TailtestRow {
    pub tau: f64,
    pub rho_tau: f64,
    pub rho_median: f64,
    pub rho_complement: f64,
    pub rho_d: f64,
    pub se_d: Option<f64>,
    pub t_d: Option<f64>,
    pub p_d: Option<f64>,
    pub rho_a: f64,
    pub se_a: Option<f64>,
    pub t_a: Option<f64>,
    pub p_a: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct TailtestReport {
    pub n: usize,
    pub density: DensityMethod,
    pub time_series: bool,
    pub rows: Vec<TailtestRow>,
}

pub fn tailtest_report(
    sample: &BivariateSample,
    taus: &[Tau],
    density: DensityMethod,
) -> Result<TailtestReport> {
    let mut rows = Vec::new();
    for &tau in taus {
        let levels = tail_test_levels(tau)?;
        let fits: [LevelFit; 3] =
            fit_levels(sample, &levels, density)?.try_into().expect("three levels");
        let est: Vec<f64> = fits.iter().map(|f| f.estimate().rho_hat).collect();
        let (d, a) = tail_tests_from(sample, &fits);
        let mut notes = Vec::new();
        let mut split = |r: Result<crate::inference::TestResult>, kind: TailKind| match r {
            Ok(t) => (Some(t.se), Some(t.t_stat), Some(t.p_value)),
            Err(e) => {
                notes.push(format!("t^{}: {e}", kind.label()));
                (None, None, None)
            }
        };
        let (se_d, t_d, p_d) = split(d, TailKind::D);
        let (se_a, t_a, p_a) = split(a, TailKind::A);
        rows.push(TailtestRow {
            tau: tau.value(),
            rho_tau: est[0],
            rho_median: est[1],
            rho_complement: est[2],
            rho_d: est[0] - est[1],
            se_d,
            t_d,
            p_d,
            rho_a: est[0] - est[2],
            se_a,
            t_a,
            p_a,
            note: (!notes.is_empty()).then(|| notes.join("; ")),
        });
    }
    Ok(TailtestReport { n: sample.len(), density, time_series: false, rows })
}

fn write_tailtest(report: &TailtestReport, format: OutputFormat, out: &mut dyn Write) -> Result<()> {
    match format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, report).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(out)?;
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut *out);
            for r in &report.rows {
                w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
            }
            w.flush()?;
        }
        OutputFormat::Table => {
            writeln!(out, "n={} density={}", report.n, report.density.label())?;
            writeln!(
                out,
                "{:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
                "tau", "rho_D", "se_D", "t_D", "p_D", "rho_A", "se_A", "t_A", "p_A"
            )?;
            for r in &report.rows {
                write!(
                    out,
                    "{:>6} {:>9.4} {:>9} {:>9} {:>9} {:>9.4} {:>9} {:>9} {:>9}",
                    r.tau,
                    r.rho_d,
                    fmt_opt(r.se_d, 4),
                    fmt_opt(r.t_d, 3),
                    fmt_opt(r.p_d, 4),
                    r.rho_a,
                    fmt_opt(r.se_a, 4),
                    fmt_opt(r.t_a, 3),
                    fmt_opt(r.p_a, 4)
                )?;
                if let Some(n) = &r.note {
                    write!(out, "  [{n}]")?;
                }
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

fn write_report(report: &McReport, format: OutputFormat, out: &mut dyn Write) -> Result<()> {
    match format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, report).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(out)?;
        }
        OutputFormat::Csv => report.write_csv(&mut *out)?,
        OutputFormat::Table => write!(out, "{}", report.to_table())?,
    }
    Ok(())
}

/// Runs a parsed command, writing reports to `stdout` and notices to `stderr`.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Estimate(args) => {
            let taus = parse_taus(&args.taus, &default_tau_grid(), stderr)?;
            let sample = read_sample_file(&args.data.input)?;
            if args.data.time_series {
                writeln!(stderr, "{TIME_SERIES_NOTICE}")?;
            }
            let density = (!args.no_inference).then(|| DensityMethod::from(args.data.density));
            let mut report = estimate_report(&sample, &taus, args.level, density, args.compare_li)?;
            report.time_series = args.data.time_series;
            let failed = report.rows.iter().filter(|r| density.is_some() && r.se.is_none()).count();
            if failed > 0 {
                writeln!(stderr, "warning: inference unavailable at {failed} tau level(s); see notes")?;
            }
            let mut out = open_output(&args.data.out, stdout)?;
            write_estimate(&report, args.data.output, &mut *out)?;
            out.flush()?;
            if density.is_some() && failed == report.rows.len() {
                return Err(Error::DegenerateVariance(
                    report.rows[0].note.clone().unwrap_or_default(),
                ));
            }
        }
        Command::Tailtest(args) => {
            let taus = parse_taus(&args.taus, &[0.1], stderr)?;
            if let Some(t) = taus.iter().find(|t| t.value() >= 0.5) {
                return Err(Error::Parameter(format!("tail tests need tau < 0.5, got {t}")));
            }
            let sample = read_sample_file(&args.data.input)?;
            if args.data.time_series {
                writeln!(stderr, "{TIME_SERIES_NOTICE}")?;
            }
            let mut report = tailtest_report(&sample, &taus, args.data.density.into())?;
            report.time_series = args.data.time_series;
            let mut out = open_output(&args.data.out, stdout)?;
            write_tailtest(&report, args.data.output, &mut *out)?;
            out.flush()?;
        }
        Command::Simulate(args) => {
            let taus = parse_taus(&args.taus, &[0.1, 0.5, 0.9], stderr)?;
            let dgp = DgpSpec::new(args.dgp.into()).with_rho(args.rho);
            let spec = CampaignSpec {
                dgp,
                n: args.n,
                taus: taus.clone(),
                reps: args.reps,
                level: args.level,
                test_level: args.test_level,
                density_method: args.density.into(),
                seed: args.seed,
            };
            spec.validate()?;
            let report = match args.mode {
                CampaignMode::Tests => run_test_campaign(&spec)?,
                mode => {
                    let truth_seed = args.seed ^ 0x7275_7468;
                    let tv = true_values(&dgp, &taus, args.truth_reps, args.truth_n, truth_seed)?;
                    if mode == CampaignMode::Coverage {
                        run_coverage_campaign(&spec, &tv)?
                    } else {
                        run_full_campaign(&spec, &tv)?
                    }
                }
            };
            writeln!(stderr, "campaign finished in {:.1} s", report.runtime_seconds)?;
            if let Some(dir) = &args.out_dir {
                std::fs::create_dir_all(dir)?;
                let stem = format!(
                    "{}_n{}_{}_seed{}",
                    report.dgp,
                    report.n,
                    report.density_method.label(),
                    report.seed
                );
                let csv_path = dir.join(format!("{stem}.csv"));
                let mut f = BufWriter::new(File::create(&csv_path)?);
                report.write_csv(&mut f)?;
                f.flush()?;
                std::fs::write(dir.join(format!("{stem}.txt")), report.to_table())?;
            }
            write_report(&report, args.output, stdout)?;
        }
        Command::Sample(args) => {
            let dgp = DgpSpec::new(args.dgp.into()).with_rho(args.rho);
            let sample = dgp.draw(args.n, &RngStream::new(args.seed, 0))?;
            let mut out = open_output(&args.out, stdout)?;
            sample.write_csv(&mut *out)?;
            out.flush()?;
        }
    }
    Ok(())
}

/// Remediation hint printed after an error message.
pub fn hint(e: &Error) -> Option<&'static str> {
    match e {
        Error::DegenerateDesign(_) => Some("both columns need at least two distinct values"),
        Error::DegenerateMoments(_) => {
            Some("the kernel bandwidth rule needs nonzero correlation; try --density hk")
        }
        Error::SingularInformation(_) => {
            Some("estimated densities vanish at the fitted lines; try the other --density method")
        }
        Error::DegenerateVariance(_) => {
            Some("the slope estimates disagree in sign, so no standard error exists")
        }
        Error::InsufficientData { .. } => Some("at least 3 complete rows are required"),
        _ => None,
    }
}
