//! Seeded bivariate data-generating processes.
//!
//! Every generator is a pure function of its parameters and an [`RngStream`].
//! A stream is a `(seed, stream_id)` pair mapped onto a counter-based ChaCha
//! generator, so replication `k` of a campaign always sees the same numbers
//! regardless of which worker runs it.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paired observations `(x_i, y_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BivariateSample {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl BivariateSample {
    /// Builds a sample, rejecting unequal lengths and non-finite values.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Parameter(format!(
                "x and y have different lengths ({} vs {})",
                xs.len(),
                ys.len()
            )));
        }
        if let Some(i) = xs.iter().zip(&ys).position(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Parameter(format!("non-finite value at observation {}", i + 1)));
        }
        Ok(Self { xs, ys })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// The same observations with the roles of x and y exchanged.
    pub fn swapped(&self) -> Self {
        Self { xs: self.ys.clone(), ys: self.xs.clone() }
    }

    /// Applies `(a·x + b, c·y + d)` to every pair.
    pub fn affine(&self, a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        Self::new(
            self.xs.iter().map(|x| a * x + b).collect(),
            self.ys.iter().map(|y| c * y + d).collect(),
        )
    }

    /// Sample Pearson correlation; `None` when either margin is constant.
    pub fn pearson(&self) -> Option<f64> {
        pearson(&self.xs, &self.ys)
    }

    /// Writes a two-column `x,y` CSV with shortest round-trip decimal formatting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y"]).map_err(csv_err)?;
        for (x, y) in self.xs.iter().zip(&self.ys) {
            w.write_record([x.to_string(), y.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson correlation of two equally long slices.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Identifies one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Which data-generating process to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpKind {
    Normal,
    T10,
    Rocket,
    Cubic,
    Garch,
}

impl DgpKind {
    pub fn label(&self) -> &'static str {
        match self {
            DgpKind::Normal => "normal",
            DgpKind::T10 => "t10",
            DgpKind::Rocket => "rocket",
            DgpKind::Cubic => "cubic",
            DgpKind::Garch => "garch",
        }
    }
}

impl std::str::FromStr for DgpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(DgpKind::Normal),
            "t10" | "t" => Ok(DgpKind::T10),
            "rocket" => Ok(DgpKind::Rocket),
            "cubic" => Ok(DgpKind::Cubic),
            "garch" => Ok(DgpKind::Garch),
            other => Err(Error::Parameter(format!("unknown dgp '{other}'"))),
        }
    }
}

/// Coefficients of `σ²_i = omega + arch·v²_{i-1} + garch·σ²_{i-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub omega: f64,
    pub arch: f64,
    pub garch: f64,
}

impl Default for GarchParams {
    fn default() -> Self {
        Self { omega: 0.001, arch: 0.1, garch: 0.85 }
    }
}

impl GarchParams {
    pub fn stationary_variance(&self) -> f64 {
        self.omega / (1.0 - self.arch - self.garch)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.omega > 0.0 && self.arch > 0.0 && self.garch > 0.0;
        if !ok || !(self.omega.is_finite() && self.arch.is_finite() && self.garch.is_finite()) {
            return Err(Error::Parameter("GARCH coefficients must be positive".into()));
        }
        if self.arch + self.garch >= 1.0 {
            return Err(Error::Parameter(format!(
                "arch + garch = {} is not covariance stationary (must be < 1)",
                self.arch + self.garch
            )));
        }
        Ok(())
    }
}

pub const ROCKET_THRESHOLD: f64 = -1.645;
pub const ROCKET_RHO: f64 = 0.5;
pub const GARCH_BURN_IN: usize = 500;

/// Full description of a data-generating process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    /// Correlation of the Gaussian core (Normal, T10, Rocket, Garch).
    pub rho: f64,
    /// Degrees of freedom for the t process.
    pub df: u32,
    /// Contamination threshold of the rocket process.
    pub c: f64,
    pub garch_params: GarchParams,
}

impl DgpSpec {
    pub fn new(kind: DgpKind) -> Self {
        Self {
            kind,
            rho: 0.5,
            df: 10,
            c: ROCKET_THRESHOLD,
            garch_params: GarchParams::default(),
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho)?;
        if self.df == 0 {
            return Err(Error::Parameter("degrees of freedom must be at least 1".into()));
        }
        if self.c.is_nan() {
            return Err(Error::Parameter("rocket threshold is NaN".into()));
        }
        self.garch_params.validate()
    }

    /// Draws `n` pairs from this process.
    pub fn draw(&self, n: usize, stream: &RngStream) -> Result<BivariateSample> {
        self.validate()?;
        match self.kind {
            DgpKind::Normal => draw_bivariate_normal(self.rho, n, stream),
            DgpKind::T10 => draw_bivariate_t(self.rho, self.df, n, stream),
            DgpKind::Rocket => draw_rocket_with(self.rho, self.c, n, stream),
            DgpKind::Cubic => draw_cubic(n, stream),
            DgpKind::Garch => {
                draw_garch_path(self.garch_params, self.rho, n, stream).map(|p| p.sample)
            }
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::Parameter(format!("rho = {rho} must lie in (-1, 1)")));
    }
    Ok(())
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Parameter("sample size n must be at least 1".into()));
    }
    Ok(())
}

fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_pairs<R: Rng>(rho: f64, n: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let r = (1.0 - rho * rho).sqrt();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let z1 = std_normal(rng);
        let z2 = std_normal(rng);
        xs.push(z1);
        ys.push(rho * z1 + r * z2);
    }
    (xs, ys)
}

/// Standard bivariate normal with correlation `rho`.
pub fn draw_bivariate_normal(rho: f64, n: usize, stream: &RngStream) -> Result<BivariateSample> {
    check_rho(rho)?;
    check_n(n)?;
    let (xs, ys) = normal_pairs(rho, n, &mut stream.rng());
    BivariateSample::new(xs, ys)
}

/// Bivariate t: a correlated normal pair scaled by a shared `sqrt(df / W)`,
/// `W ~ χ²(df)`.
pub fn draw_bivariate_t(rho: f64, df: u32, n: usize, stream: &RngStream) -> Result<BivariateSample> {
    check_rho(rho)?;
    check_n(n)?;
    if df == 0 {
        return Err(Error::Parameter("degrees of freedom must be at least 1".into()));
    }
    let mut rng = stream.rng();
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::Parameter(e.to_string()))?;
    let r = (1.0 - rho * rho).sqrt();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let z1 = std_normal(&mut rng);
        let z2 = std_normal(&mut rng);
        let w: f64 = chi.sample(&mut rng);
        let scale = (df as f64 / w).sqrt();
        xs.push(z1 * scale);
        ys.push((rho * z1 + r * z2) * scale);
    }
    BivariateSample::new(xs, ys)
}

/// Rocket-shaped process with the default threshold and core correlation.
pub fn draw_rocket(n: usize, stream: &RngStream) -> Result<BivariateSample> {
    draw_rocket_with(ROCKET_RHO, ROCKET_THRESHOLD, n, stream)
}

/// Bivariate normal(`rho`) pairs contaminated by a common N(0,1) error in the
/// lower-left orthant `{x̃ ≤ c, ỹ ≤ c}`.
///
/// The Gaussian core is drawn first, exactly as [`draw_bivariate_normal`]
/// would from the same stream, followed by `n` contamination draws.
pub fn draw_rocket_with(rho: f64, c: f64, n: usize, stream: &RngStream) -> Result<BivariateSample> {
    check_rho(rho)?;
    check_n(n)?;
    if c.is_nan() {
        return Err(Error::Parameter("rocket threshold is NaN".into()));
    }
    let mut rng = stream.rng();
    let (mut xs, mut ys) = normal_pairs(rho, n, &mut rng);
    for (x, y) in xs.iter_mut().zip(ys.iter_mut()) {
        let e = std_normal(&mut rng);
        if *x <= c && *y <= c {
            *x += e;
            *y += e;
        }
    }
    BivariateSample::new(xs, ys)
}

/// `Y = X³ + e` with independent standard normal `X`, `e`.
pub fn draw_cubic(n: usize, stream: &RngStream) -> Result<BivariateSample> {
    check_n(n)?;
    let mut rng = stream.rng();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = std_normal(&mut rng);
        let e = std_normal(&mut rng);
        xs.push(x);
        ys.push(x * x * x + e);
    }
    BivariateSample::new(xs, ys)
}

/// A GARCH(1,1) draw together with the conditional variance paths that
/// produced it.
#[derive(Debug, Clone)]
pub struct GarchPath {
    pub sample: BivariateSample,
    pub sigma2_x: Vec<f64>,
    pub sigma2_y: Vec<f64>,
    /// Conditional variances of the last burn-in step, needed to recompute
    /// the first emitted variance.
    pub pre_sigma2: (f64, f64),
    /// Last burn-in observation.
    pub pre_value: (f64, f64),
}

pub fn draw_garch(n: usize, stream: &RngStream) -> Result<BivariateSample> {
    draw_garch_path(GarchParams::default(), 0.5, n, stream).map(|p| p.sample)
}

/// Two GARCH(1,1) margins driven by bivariate normal(`rho`) innovations.
///
/// Variances start at the stationary value and the first
/// [`GARCH_BURN_IN`] steps are discarded.
pub fn draw_garch_path(
    params: GarchParams,
    rho: f64,
    n: usize,
    stream: &RngStream,
) -> Result<GarchPath> {
    params.validate()?;
    check_rho(rho)?;
    check_n(n)?;
    let mut rng = stream.rng();
    let r = (1.0 - rho * rho).sqrt();
    let total = n + GARCH_BURN_IN;

    let s0 = params.stationary_variance();
    let (mut s2x, mut s2y) = (s0, s0);
    let (mut px, mut py) = (f64::NAN, f64::NAN);
    let mut pre = (s0, s0);
    let mut pre_value = (0.0, 0.0);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut sigma2_x = Vec::with_capacity(n);
    let mut sigma2_y = Vec::with_capacity(n);

    for t in 0..total {
        if t > 0 {
            s2x = params.omega + params.arch * px * px + params.garch * s2x;
            s2y = params.omega + params.arch * py * py + params.garch * s2y;
        }
        let z1 = std_normal(&mut rng);
        let z2 = std_normal(&mut rng);
        let (ex, ey) = (z1, rho * z1 + r * z2);
        px = s2x.sqrt() * ex;
        py = s2y.sqrt() * ey;
        if t + 1 == GARCH_BURN_IN {
            pre = (s2x, s2y);
            pre_value = (px, py);
        }
        if t >= GARCH_BURN_IN {
            xs.push(px);
            ys.push(py);
            sigma2_x.push(s2x);
            sigma2_y.push(s2y);
        }
    }
    Ok(GarchPath {
        sample: BivariateSample::new(xs, ys)?,
        sigma2_x,
        sigma2_y,
        pre_sigma2: pre,
        pre_value,
    })
}
