use serde::{Deserialize, Serialize};

use super::network::{NetworkParams, Weights};
use super::NeuralError;
use crate::grid::{CellLabel, OccupancyMap};

/// Floor applied inside every logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Loss used for the grid head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Sum of binary cross-entropies of every softmax output against the
    /// one-hot label, `-sum_m o_m ln z_m + (1 - o_m) ln(1 - z_m)`.
    #[default]
    BinaryPerClass,
    /// Standard categorical cross-entropy `-ln z_label`.
    Categorical,
}

/// Training target for one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Cell(CellLabel),
    Point { x: f64, y: f64 },
}

/// `0.5 * sum ||W||^2` over the fully-connected and head weight matrices.
/// Biases and LSTM weights are not penalized.
pub fn l2_penalty(weights: &Weights) -> f64 {
    let mut s = 0.0;
    for (spec, t) in weights.specs().iter().zip(weights.slices()) {
        if spec.regularized {
            s += t.iter().map(|v| v * v).sum::<f64>();
        }
    }
    0.5 * s
}

#[inline]
fn clamped_ln(v: f64) -> f64 {
    v.max(LOG_CLAMP).ln()
}

/// Data term of the grid loss for a full class-probability vector.
pub(crate) fn class_data_loss(probs: &[f64], class: usize, kind: LossKind) -> f64 {
    match kind {
        LossKind::BinaryPerClass => -probs
            .iter()
            .enumerate()
            .map(|(m, &z)| {
                if m == class {
                    clamped_ln(z)
                } else {
                    clamped_ln(1.0 - z)
                }
            })
            .sum::<f64>(),
        LossKind::Categorical => -clamped_ln(probs[class]),
    }
}

/// `dL/dz` for each class probability; zero where the log clamp is active.
pub(crate) fn class_data_loss_grad(probs: &[f64], class: usize, kind: LossKind) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(m, &z)| match (kind, m == class) {
            (_, true) if z >= LOG_CLAMP => -1.0 / z,
            (LossKind::BinaryPerClass, false) if 1.0 - z >= LOG_CLAMP => 1.0 / (1.0 - z),
            _ => 0.0,
        })
        .collect()
}

/// Per-example grid loss plus `lambda * L2`.
pub fn classification_loss(
    output: &OccupancyMap,
    label: &CellLabel,
    params: &NetworkParams,
    lambda: f64,
    kind: LossKind,
) -> Result<f64, NeuralError> {
    if output.geometry != params.geometry {
        return Err(NeuralError::Shape("output geometry differs from the network's".into()));
    }
    let probs = output.class_probs();
    if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(NeuralError::Numeric(format!("probability {bad} outside [0, 1]")));
    }
    let class = label.linear_class(&output.geometry);
    Ok(class_data_loss(&probs, class, kind) + lambda * l2_penalty(&params.weights))
}

/// `0.5 * ((x - tx)^2 + (y - ty)^2) + lambda * L2`.
pub fn regression_loss(
    predicted: (f64, f64),
    target: (f64, f64),
    params: &NetworkParams,
    lambda: f64,
) -> Result<f64, NeuralError> {
    let all = [predicted.0, predicted.1, target.0, target.1, lambda];
    if !all.iter().all(|v| v.is_finite()) {
        return Err(NeuralError::Numeric("non-finite regression loss input".into()));
    }
    let dx = predicted.0 - target.0;
    let dy = predicted.1 - target.1;
    Ok(0.5 * (dx * dx + dy * dy) + lambda * l2_penalty(&params.weights))
}
