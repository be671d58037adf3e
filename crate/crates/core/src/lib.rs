//! Statistical location- and rotation-aware beam search for millimetre-wave
//! links.
//!
//! The crate is organised bottom-up:
//!
//! - [`tof_ranging`]: tied-variance Gaussian mixtures over windows of two-way
//!   ToF samples, AIC model selection and least-positive-mean ranging.
//! - [`positioning`]: weighted Gauss-Newton multilateration, HDOP/dRMS and the
//!   time-division measurement scheduler.
//! - [`rotation`]: angular speed from the spectrum of squared range series.
//! - [`angle_error`]: closed-form angular search half-width at a confidence
//!   level.
//! - [`beam_search`]: SLASH link establishment and maintenance, baselines and
//!   the normalized-rate metric.
//!
//! Every operation is a pure function of its inputs plus an explicit seed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angle_error;
pub mod beam_search;
mod error;
pub mod geometry;
pub mod positioning;
pub mod rotation;
pub mod tof_ranging;

pub use error::{Error, Result};
pub use geometry::{ApId, Point2};
