//! Vehicle trajectory prediction on an ego-centric occupancy grid.
//!
//! An LSTM reads a short window of a target vehicle's relative motion and
//! outputs either a probability for every grid cell (plus an out-of-boundary
//! class) or a point estimate, `delta` seconds ahead. A constant-velocity
//! Kalman filter provides the baseline for both output kinds.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod eval;
pub mod grid;
pub mod kalman;
pub mod neural;
pub mod parallel;
pub mod render;

pub use parallel::Execution;
