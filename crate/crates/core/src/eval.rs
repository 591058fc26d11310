//! Scoring the LSTM and the Kalman baseline on the same windows.

use thiserror::Error;

use crate::data::TrackWindow;
use crate::grid::{regression_mae, weighted_mae, CellLabel, GridError, MaeReport, OccupancyMap};
use crate::kalman::{kf_filter, kf_predict_grid, kf_predict_point, KalmanError, KfConfig, KfTrack};
use crate::neural::{forward, HeadKind, NetworkParams, NeuralError, Prediction};
use crate::parallel::Execution;

pub const LSTM_METHOD: &str = "lstm";
pub const KALMAN_METHOD: &str = "kalman";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no windows to evaluate: {0}")]
    Empty(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Runs the baseline filter over a window's positions at 100 ms, seeded
/// with the first step's measured velocity.
pub fn kf_track_for_window(window: &TrackWindow, config: &KfConfig) -> Result<KfTrack, KalmanError> {
    let positions: Vec<(f64, f64)> = window.features.iter().map(|f| (f.x, f.y)).collect();
    let first = window
        .features
        .first()
        .ok_or_else(|| KalmanError::Argument("empty window".into()))?;
    kf_filter(&positions, (first.x_dot, first.y_dot), 0.1, config)
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub delta: f64,
    pub report: MaeReport,
}

pub const METRICS_HEADER: &str = "method,delta,mae_x,mae_y,mae";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method, r.delta, r.report.mae_x, r.report.mae_y, r.report.mae
        ));
    }
    out
}

/// Occupancy predictions of both methods on the in-grid windows.
#[derive(Debug, Clone)]
pub struct GridEvaluation {
    pub lstm_maps: Vec<OccupancyMap>,
    pub kf_maps: Vec<OccupancyMap>,
    pub labels: Vec<CellLabel>,
    pub lstm: MaeReport,
    pub kf: MaeReport,
    /// Windows skipped because their label is out of the grid.
    pub excluded_out_of_boundary: usize,
}

/// Point predictions of both methods.
#[derive(Debug, Clone)]
pub struct PointEvaluation {
    pub lstm_points: Vec<(f64, f64)>,
    pub kf_points: Vec<(f64, f64)>,
    pub targets: Vec<(f64, f64)>,
    pub lstm: MaeReport,
    pub kf: MaeReport,
}

/// Weighted MAE in grid units of a grid-head network and of the gridded
/// Kalman prediction. Windows with an out-of-boundary label are skipped since
/// the metric has no cell to measure against.
pub fn evaluate_grid(
    params: &NetworkParams,
    windows: &[TrackWindow],
    kf: &KfConfig,
    execution: Execution,
) -> Result<GridEvaluation, EvalError> {
    if params.head != HeadKind::Grid {
        return Err(EvalError::Neural(NeuralError::HeadMismatch(
            "grid evaluation needs a grid-head checkpoint".into(),
        )));
    }
    let scored: Vec<&TrackWindow> = windows.iter().filter(|w| w.label_grid.is_in_grid()).collect();
    if scored.is_empty() {
        return Err(EvalError::Empty("every label is out of the grid".into()));
    }
    let pairs = execution.try_map(&scored, |w| {
        let (pred, _) = forward(params, &w.features)?;
        let lstm = pred.into_map().expect("grid head");
        let track = kf_track_for_window(w, kf)?;
        let kf_map = kf_predict_grid(&track, params.delta, &params.geometry)?;
        Ok::<_, EvalError>((lstm, kf_map))
    })?;
    let (lstm_maps, kf_maps): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let labels: Vec<CellLabel> = scored.iter().map(|w| w.label_grid).collect();
    Ok(GridEvaluation {
        lstm: weighted_mae(&lstm_maps, &labels)?,
        kf: weighted_mae(&kf_maps, &labels)?,
        lstm_maps,
        kf_maps,
        labels,
        excluded_out_of_boundary: windows.len() - scored.len(),
    })
}

/// Point MAE in meters of a regression-head network and of the Kalman
/// constant-velocity extrapolation.
pub fn evaluate_regression(
    params: &NetworkParams,
    windows: &[TrackWindow],
    kf: &KfConfig,
    execution: Execution,
) -> Result<PointEvaluation, EvalError> {
    if params.head != HeadKind::Regression {
        return Err(EvalError::Neural(NeuralError::HeadMismatch(
            "regression evaluation needs a regression-head checkpoint".into(),
        )));
    }
    if windows.is_empty() {
        return Err(EvalError::Empty("no windows".into()));
    }
    let pairs = execution.try_map(windows, |w| {
        let (pred, _) = forward(params, &w.features)?;
        let lstm = match pred {
            Prediction::Point { x, y } => (x, y),
            Prediction::Grid(_) => unreachable!("regression head"),
        };
        let track = kf_track_for_window(w, kf)?;
        Ok::<_, EvalError>((lstm, kf_predict_point(&track, params.delta)))
    })?;
    let (lstm_points, kf_points): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let targets: Vec<(f64, f64)> = windows.iter().map(|w| w.label_point).collect();
    Ok(PointEvaluation {
        lstm: regression_mae(&lstm_points, &targets)?,
        kf: regression_mae(&kf_points, &targets)?,
        lstm_points,
        kf_points,
        targets,
    })
}

/// The two metric rows (LSTM, then Kalman) for a checkpoint of either head.
pub fn evaluate(
    params: &NetworkParams,
    windows: &[TrackWindow],
    kf: &KfConfig,
    execution: Execution,
) -> Result<[MetricRow; 2], EvalError> {
    let (lstm, kalman) = match params.head {
        HeadKind::Grid => {
            let e = evaluate_grid(params, windows, kf, execution)?;
            (e.lstm, e.kf)
        }
        HeadKind::Regression => {
            let e = evaluate_regression(params, windows, kf, execution)?;
            (e.lstm, e.kf)
        }
    };
    Ok([
        MetricRow {
            method: LSTM_METHOD.into(),
            delta: params.delta,
            report: lstm,
        },
        MetricRow {
            method: KALMAN_METHOD.into(),
            delta: params.delta,
            report: kalman,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{coord_to_label, GridGeometry};
    use crate::neural::FeatureVector;

    fn straight_window(delta: f64) -> TrackWindow {
        let g = GridGeometry::default();
        let features: Vec<FeatureVector> = (0..20)
            .map(|k| FeatureVector {
                x: 60.0 - 0.2 * k as f64,
                y: 0.1,
                x_dot: -2.0,
                y_dot: 0.0,
                psi: 0.0,
                v: 25.0,
            })
            .collect();
        let label = (60.0 - 0.2 * 19.0 - 2.0 * delta, 0.1);
        TrackWindow {
            features,
            label_grid: coord_to_label(&g, label.0, label.1).unwrap(),
            label_point: label,
            delta,
            track_id: "a".into(),
            t_end: 1.95,
            t_label: 1.95 + delta,
            geometry: g,
        }
    }

    #[test]
    fn kalman_tracks_a_straight_window() {
        let w = straight_window(1.0);
        let track = kf_track_for_window(&w, &KfConfig::default()).unwrap();
        let (x, y) = kf_predict_point(&track, 1.0);
        assert!((x - w.label_point.0).abs() < 1e-6);
        assert!((y - w.label_point.1).abs() < 1e-6);
    }

    #[test]
    fn csv_shape() {
        let r = MaeReport {
            mae: 1.5,
            mae_x: 1.0,
            mae_y: 0.25,
        };
        let rows = vec![
            MetricRow {
                method: LSTM_METHOD.into(),
                delta: 0.5,
                report: r,
            },
            MetricRow {
                method: KALMAN_METHOD.into(),
                delta: 0.5,
                report: r,
            },
        ];
        assert_eq!(
            metrics_csv(&rows),
            "method,delta,mae_x,mae_y,mae\nlstm,0.5,1,0.25,1.5\nkalman,0.5,1,0.25,1.5\n"
        );
    }
}
