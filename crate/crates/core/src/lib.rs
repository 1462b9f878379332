//! Estimation of time-varying vaccine efficacy from randomized trials with
//! staggered unblinding and placebo crossover.
//!
//! The crate is split into the data model ([`model`]), inverse-probability
//! weighting nuisance fits ([`nuisance`]), the weighted estimating-equation
//! solver ([`estimator`]), a trial simulator ([`sim`]) and the Monte Carlo
//! driver behind the `ve-wane` binary ([`harness`]).

// NaN must fail domain checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimator;
pub mod harness;
pub mod model;
pub mod nuisance;
pub mod serde_extended_f64;
pub mod sim;
