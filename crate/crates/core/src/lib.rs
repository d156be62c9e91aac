//! Sample-size planning and blinded re-estimation for two-arm superiority
//! trials analysed with ANCOVA (analysis of covariance).
//!
//! The crate covers the full planning workflow:
//!
//! - [`design`]: the joint covariance model of outcome and baseline
//!   covariates, feasibility diagnostics (positive semidefiniteness, multiple
//!   correlation), and the design parameters shared by every operation.
//! - [`sizing`]: closed-form total sample sizes for the covariate-adjusted
//!   two-arm comparison, from the basic normal approximation to small-sample
//!   corrected variants, plus rounding to an allocation-ratio grid.
//! - [`ancova`]: the covariate-adjusted group comparison itself, with the
//!   moment-based variance estimator and the one-sided superiority test.
//! - [`recalc`]: blinded interim sample-size recalculation driven by the
//!   residual variance of a pooled (treatment-ignorant) regression.
//! - [`mc`]: a reproducible Monte Carlo engine that verifies type I error and
//!   power of both fixed and recalculated designs, including an empirical
//!   search for the exact sample size.
//! - [`distributions`]: the numeric kernel (normal and Student t CDFs and
//!   quantiles, multivariate normal sampling, splittable RNG streams).
//!
//! All randomized operations consume [`distributions::RngStream`] values keyed
//! by `(seed, stream_index)`, so results are bit-identical across runs and
//! independent of thread scheduling.

pub mod ancova;
pub mod design;
pub mod distributions;
pub mod error;
pub mod mc;
pub mod recalc;
pub mod sizing;

pub use error::{Error, Result};
