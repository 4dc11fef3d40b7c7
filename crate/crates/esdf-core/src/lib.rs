//! Entire-space delayed-feedback conversion modeling.
//!
//! Post-click conversions arrive after long, feature-dependent delays, so a
//! training snapshot taken at any fixed date contains censored labels: clicked
//! impressions that *will* convert but have not yet. This crate models the
//! conversion process over the entire impression space with a shared-embedding
//! multi-tower network (CTR, conditional CVR, and a discrete day-slot delay
//! distribution) and trains it by generalized EM over the censored likelihood.
//!
//! The crate is organized around the data path:
//!
//! * [`event`] — impression/click/conversion records, day-slot discretization,
//!   index-set partitioning.
//! * [`synth`] — synthetic log generator with known ground truth, the
//!   verification oracle for everything downstream.
//! * [`attribution`] — replays a log against an observation date and builds
//!   training labels under each compared policy.
//! * [`model`] — the multi-head network with exact reverse-mode gradients.
//! * [`objectives`] — the censored EM objective, its expectation step, and the
//!   hard-label / exponential-delay baselines.
//! * [`trainer`] — Adam, minibatching, EM scheduling, deterministic seeding.
//! * [`metrics`] — AUC, request-grouped AUC, relative improvement, log loss by
//!   delay bucket, calibration.
//! * [`logio`] — the line-oriented file formats shared by the CLI and tests.
//!
//! Batch loops run data-parallel under the `parallel` feature (enabled by
//! default) with chunk-ordered reductions, so results are bit-identical with
//! and without it; see [`par`].

pub mod attribution;
pub mod error;
pub mod event;
pub mod logio;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod par;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
