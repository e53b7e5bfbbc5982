//! Experiment runner, file formats and verification front end for the
//! provisioning-under-censoring laboratory in `picrl-core`.
//!
//! - [`config`]     — the JSON experiment configuration.
//! - [`runner`]     — pipeline phases, artifacts and summaries.
//! - [`trace_io`]   — trace CSV interchange plus statistics sidecars.
//! - [`checkpoint`] — versioned JSON network checkpoints.
//! - [`verify`]     — self-contained numerical checks of the theory.
//! - [`report`]     — cross-run comparison tables and plot-data CSVs.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod runner;
pub mod trace_io;
pub mod verify;
