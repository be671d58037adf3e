//! Simulation harness: synthetic ToF and 60 GHz channels, mobility
//! scenarios, and the strategy comparison behind the `slash` CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod engine;
pub mod output;
pub mod rates;
pub mod scenario;
pub mod tof;
pub mod tracker;
pub mod trials;
