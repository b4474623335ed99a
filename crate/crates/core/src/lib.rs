//! Quantile correlation coefficient of a bivariate sample.
//!
//! The τ-quantile correlation is the signed geometric mean of the two
//! τ-quantile regression slopes (Y on X and X on Y). This crate provides
//!
//! - exact pinball-loss line fitting in both directions ([`quantreg`]),
//! - the point estimator, tail dependence / asymmetry measures and the
//!   indicator correlation used for comparison ([`qcorr`]),
//! - conditional density estimates at the fitted lines ([`conddens`]),
//! - sandwich variances, confidence intervals and tail tests ([`inference`]),
//! - seeded data-generating processes ([`sampling`]) and a Monte-Carlo
//!   harness for coverage and size/power studies ([`simkit`]),
//! - the command-line front end ([`cli`]).

pub mod cli;
pub mod conddens;
pub mod error;
pub mod inference;
pub mod qcorr;
pub mod quantreg;
pub mod sampling;
pub mod simkit;

pub use error::{Error, Result};
pub use quantreg::{Direction, QuantRegFit, Tau};
pub use sampling::{BivariateSample, DgpKind, DgpSpec, RngStream};
