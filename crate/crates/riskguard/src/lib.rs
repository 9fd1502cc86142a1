//! Distribution-free risk control for black-box predictive distributions.
//!
//! This crate post-processes the outputs of an already-trained classifier (or
//! a pair of classifiers in an edge-cloud deployment) into decisions that come
//! with finite-sample statistical guarantees:
//!
//! - [`conformal`] — split conformal prediction, localized conformal
//!   prediction, and highest-mass sets.
//! - [`oce`] / [`rcps`] — optimized-certainty-equivalent risks (mean, entropic,
//!   CVaR) and hyperparameter selection that controls them in expectation
//!   (CRC) or with high probability over calibration draws (RCPS, via a
//!   betting-martingale upper confidence bound).
//! - [`credal`] — conformalized credal inference: divergence balls around a
//!   small model's predictive distribution calibrated to contain the reference
//!   model's distribution, plus single-distribution extraction rules.
//! - [`cascade`] — edge-cloud routing by conformal alignment: sequential
//!   screening with false-discovery-rate control over which inputs are served
//!   by the small model.
//! - [`metrics`] — ECE, reliability diagrams, MMCE, and TV-based OOD detection
//!   probability.
//! - [`synthworld`] / [`harness`] — deterministic synthetic oracle worlds and
//!   a many-trial experiment driver used to exercise every guarantee at desk
//!   scale.
//!
//! All randomness flows through explicit counter-derived streams
//! ([`core::RandomnessContract`]), so every computation is reproducible
//! bit-for-bit, including under the data-parallel execution enabled by the
//! `parallel` feature (on by default; disable for a fully sequential build).

// Validation sites use `!(x > 0.0)`-style comparisons on purpose: a NaN
// parameter must fail the check rather than slip through a negated `<=`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cascade;
pub mod conformal;
pub mod core;
pub mod credal;
pub mod harness;
pub mod metrics;
pub mod oce;
mod par;
pub mod rcps;
pub mod synthworld;

pub use crate::core::{make_prob_vector, Example, PredictionSet, ProbVector, RandomnessContract};
