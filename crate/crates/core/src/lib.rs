//! Estimation and prediction of doubly sparse linear time-varying channels.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`channel`] draws delay-Doppler supports and tap trajectories and
//!   passes sample streams through them.
//! * [`waveform`] holds the SCM, OFDM, AFDM and OTFS transform chains,
//!   pilot plans and closed-form pilot overheads.
//! * [`dpss`] computes Slepian sequences and the shifted elementary basis
//!   expansion used for off-grid channels.
//! * [`sensing`] assembles measurement matrices and runs hierarchical hard
//!   thresholding pursuit.
//! * [`estimate`] provides LMMSE coefficient estimation, reconstruction,
//!   extrapolation-based prediction and the reference predictors.
//! * [`harness`] runs seeded Monte Carlo sweeps and writes CSV/JSON reports.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod dpss;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod linalg;
pub mod rng;
pub mod sensing;
pub mod waveform;

pub use error::{Error, Result};

/// Complex sample type used throughout.
pub type C64 = num_complex::Complex64;
