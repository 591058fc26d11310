//! Central finite-difference check of [`backward`](super::backward).
//!
//! The numeric side only calls `forward` and the public loss functions, so it
//! shares no code with the analytic gradient path.

use super::loss::{classification_loss, regression_loss, LossKind, Target};
use super::network::{forward, NetworkParams, Prediction};
use super::{backward, FeatureVector, NeuralError};

/// Worst disagreement found by [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: (String, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Full loss (data term plus `lambda * L2`) of one example.
pub fn full_loss(
    params: &NetworkParams,
    sequence: &[FeatureVector],
    target: &Target,
    kind: LossKind,
    lambda: f64,
) -> Result<f64, NeuralError> {
    let (pred, _) = forward(params, sequence)?;
    match (pred, target) {
        (Prediction::Grid(map), Target::Cell(label)) => {
            classification_loss(&map, label, params, lambda, kind)
        }
        (Prediction::Point { x, y }, Target::Point { x: tx, y: ty }) => {
            regression_loss((x, y), (*tx, *ty), params, lambda)
        }
        _ => Err(NeuralError::HeadMismatch("target does not match head".into())),
    }
}

/// Compares every analytic gradient entry with `(L(w+eps) - L(w-eps)) / 2eps`.
pub fn check_gradients(
    params: &NetworkParams,
    sequence: &[FeatureVector],
    target: &Target,
    kind: LossKind,
    lambda: f64,
    eps: f64,
    floor: f64,
) -> Result<GradCheckReport, NeuralError> {
    let (_, tape) = forward(params, sequence)?;
    let analytic = backward(params, &tape, target, kind, lambda)?;
    let specs = params.weights.specs();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        analytic: 0.0,
        numeric: 0.0,
        n_checked: 0,
    };
    for (ti, (spec, grad)) in specs.iter().zip(analytic.slices()).enumerate() {
        for (k, &a) in grad.iter().enumerate() {
            let original = probe.weights.slices()[ti][k];
            probe.weights.slices_mut()[ti][k] = original + eps;
            let up = full_loss(&probe, sequence, target, kind, lambda)?;
            probe.weights.slices_mut()[ti][k] = original - eps;
            let down = full_loss(&probe, sequence, target, kind, lambda)?;
            probe.weights.slices_mut()[ti][k] = original;
            let numeric = (up - down) / (2.0 * eps);
            let e = relative_error(a, numeric, floor);
            report.n_checked += 1;
            if e > report.max_rel_error || report.worst.0.is_empty() {
                report.max_rel_error = e;
                report.worst = (spec.name.clone(), k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
