//! Trajectory data: raw samples, 100 ms resampling, sliding-window examples,
//! per-track splits, a synthetic highway scenario generator and JSONL I/O.

mod jsonl;
mod resample;
mod scenario;
mod split;
mod windows;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellLabel, GridError, GridGeometry};
use crate::neural::FeatureVector;

pub use jsonl::{read_jsonl, write_jsonl, write_jsonl_to};
pub use resample::{bin_index, resample_100ms, resample_track, RESAMPLE_PERIOD};
pub use scenario::{
    generate_scenarios, scenario_counts, smoothstep, Brake, Manifest, Maneuver, Scenario,
    ScenarioKind, ScenarioMix, ScenarioParams, ScenarioSpec, RAW_PERIOD,
};
pub use split::{prepare_split, split_by_track};
pub use windows::{build_dataset, build_windows};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid scenario spec: {0}")]
    Config(String),
    #[error("line {line}: field `{field}`: {reason}")]
    Schema {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One timestamped observation of a target vehicle in the ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    /// Absolute time, seconds.
    pub t: f64,
    pub track_id: String,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ego_yaw_rate: f64,
    pub ego_speed: f64,
}

impl RawSample {
    pub fn features(&self) -> FeatureVector {
        FeatureVector {
            x: self.x,
            y: self.y,
            x_dot: self.vx,
            y_dot: self.vy,
            psi: self.ego_yaw_rate,
            v: self.ego_speed,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.x,
            self.y,
            self.vx,
            self.vy,
            self.ego_yaw_rate,
            self.ego_speed,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// All samples of one vehicle, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: String,
    pub samples: Vec<RawSample>,
}

/// One training example: a window of feature vectors and the position
/// `delta` seconds after its last step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackWindow {
    pub features: Vec<FeatureVector>,
    pub label_grid: CellLabel,
    pub label_point: (f64, f64),
    pub delta: f64,
    pub track_id: String,
    /// Timestamp of the last window step.
    pub t_end: f64,
    /// Timestamp of the labeling sample.
    pub t_label: f64,
    pub geometry: GridGeometry,
}

/// Train and validation windows, split by vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<TrackWindow>,
    pub validation: Vec<TrackWindow>,
    pub seed: u64,
    pub ratio: f64,
}

impl DatasetSplit {
    /// Keeps every `stride`-th window of each side.
    pub fn subsample(&self, stride: usize) -> DatasetSplit {
        let stride = stride.max(1);
        let pick = |v: &[TrackWindow]| v.iter().step_by(stride).cloned().collect();
        DatasetSplit {
            train: pick(&self.train),
            validation: pick(&self.validation),
            seed: self.seed,
            ratio: self.ratio,
        }
    }
}
