//! Core algorithms for resource provisioning under prediction-induced
//! censoring: when the provisioning level itself caps what can be observed
//! (`y = min(demand, action)`), naive learners drift into self-reinforcing
//! under-provisioning. This crate provides the pieces of a closed loop that
//! does not:
//!
//! - [`stats`] — Gaussian and truncated-Gaussian primitives, including a
//!   numerically stable Inverse Mills Ratio.
//! - [`workload`] — synthetic demand traces (seasonal, heavy-tailed bursty,
//!   drifted) plus min-max normalization and chronological splits.
//! - [`env`] — the censoring environment and cost/regret accounting; the
//!   only component that ever sees true demand.
//! - [`predictor`] — a windowed probabilistic forecaster with a Gaussian
//!   head trained by NLL, hand-written backprop.
//! - [`estimator`] — windowed Tobit estimation of demand from mixed
//!   censored/uncensored feedback, plus the pessimism factor.
//! - [`agent`] — policy/value networks, surrogate rewards for censored
//!   steps, offline pretraining and KL/EMA-regularized online updates.
//! - [`controller`] — the fast reactive calibrator, hierarchical action
//!   composition, and the full online loop.
//! - [`baselines`] — naive mixture learner, conformal, Thompson sampling,
//!   rule autoscaler, and the evaluation-only oracle.
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats and the CLI
//! live in the companion `picrl` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod agent;
pub mod baselines;
pub mod controller;
pub mod env;
pub mod estimator;
pub mod nn;
pub mod predictor;
pub mod rng;
pub mod stats;
pub mod workload;

pub use env::{CostModel, EpisodeLedger, Feedback};
pub use stats::{GaussianBelief, SIGMA_FLOOR};
