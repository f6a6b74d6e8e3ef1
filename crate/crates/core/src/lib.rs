//! Fully loaded system margin estimation for DWDM lightpaths.
//!
//! The crate is organised bottom-up:
//!
//! - [`gn`]: ASE, nonlinear interference and SNR of a channel under test on a
//!   multi-span link, with a closed-form fast path and a quadrature reference.
//! - [`spectrum`]: full-band channel plans and random partial-load masks.
//! - [`dataset`]: scenario sampling, labelled record generation and splits.
//! - [`features`] and [`bayes_ridge`]: standardisation, degree-4 monomial
//!   expansion and Bayesian ridge regression with evidence maximisation.
//! - [`adaptation`]: a perturbed surrogate link and few-shot affine
//!   recalibration of a trained model.
//! - [`analysis`]: error histograms and feature sweeps.
//! - [`cli`]: the `margin-probe` command line.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod analysis;
pub mod bayes_ridge;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod gn;
pub mod manifest;
pub mod quadrature;
pub mod seed;
pub mod spectrum;
pub mod stats;

pub use error::{Error, Result};
