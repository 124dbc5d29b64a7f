//! Bayesian linear mixed-model association analysis with analytic approximate
//! Bayes factors.
//!
//! The crate is organized bottom-up: [`lmm`] fits the variance components,
//! [`abf`] turns GLS summaries into Bayes factors under the prior covariances
//! built in [`priors`], and [`settest`], [`finemap`] and [`fdr`] build the
//! analyses on top. [`sim`] generates data and [`oracle`] integrates the exact
//! Bayes factor numerically for validation.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abf;
pub mod error;
pub mod fdr;
pub mod finemap;
pub mod io;
pub mod kinship;
pub mod linalg;
pub mod lmm;
pub mod optim;
pub mod oracle;
pub mod priors;
pub mod settest;
pub mod sim;
pub mod stats;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use lmm::{Dataset, GlsEffect, Lmm, VarianceFit};
