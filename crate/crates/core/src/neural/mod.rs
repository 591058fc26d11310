//! The LSTM trajectory predictor.
//!
//! A track window of [`FeatureVector`]s is normalized, passed through an
//! input fully-connected stack at every step, two stacked LSTM layers, an
//! output fully-connected stack on the final hidden state, and finally either
//! a softmax over grid cells (+ out-of-boundary) or a two-coordinate
//! regression head. Gradients are computed by hand with backpropagation
//! through time.

mod backward;
pub mod checkpoint;
pub mod gradcheck;
mod layers;
mod loss;
mod network;
pub mod tensor;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridError;

pub use backward::backward;
pub use layers::{lstm_step, Activation, Dense, Gate, GateActivations, LstmLayer, LstmLayerState};
pub use loss::{
    classification_loss, l2_penalty, regression_loss, LossKind, Target, LOG_CLAMP,
};
pub use network::{
    forward, predict_fleet, Architecture, HeadKind, InitRecipe, NetworkParams, Normalization,
    Prediction, Provenance, TensorSpec, Tape, Weights, MAX_SEQUENCE_LENGTH,
};
pub use train::{
    batch_gradient, mean_loss, sgd_step, train, EpochRecord, LrScheduler, Optimizer, TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("non-finite activation in {layer}")]
    NonFinite { layer: String },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("tape does not match the parameters: {0}")]
    State(String),
    #[error("head mismatch: {0}")]
    HeadMismatch(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// One step of network input: relative position and velocity of the target
/// vehicle plus ego yaw rate and speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub x: f64,
    pub y: f64,
    pub x_dot: f64,
    pub y_dot: f64,
    /// Ego yaw rate, rad/s.
    pub psi: f64,
    /// Ego speed, m/s.
    pub v: f64,
}

impl FeatureVector {
    pub const LEN: usize = 6;
    pub const NAMES: [&'static str; 6] = ["x", "y", "x_dot", "y_dot", "psi", "v"];

    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.x_dot, self.y_dot, self.psi, self.v]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}
