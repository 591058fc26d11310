use crate::grid::{coord_to_label, GridGeometry};
use crate::parallel::Execution;

use super::resample::RESAMPLE_PERIOD;
use super::{DataError, RawSample, Track, TrackWindow};

const SPACING_TOLERANCE: f64 = 1e-6;

/// Number of 100 ms steps in `delta`, or an error if `delta` is not a
/// positive multiple of the sample period.
fn horizon_steps(delta: f64) -> Result<usize, DataError> {
    let steps = delta / RESAMPLE_PERIOD;
    if !(delta > 0.0) || !steps.is_finite() || (steps - steps.round()).abs() > 1e-9 {
        return Err(DataError::Argument(format!(
            "delta {delta} s is not a positive multiple of {RESAMPLE_PERIOD} s"
        )));
    }
    Ok(steps.round() as usize)
}

/// Slides a `window`-step window with stride 1 over every gap-free run of a
/// 100 ms track and labels it with the sample `delta` seconds after its
/// last step.
pub fn build_windows(
    track: &[RawSample],
    delta: f64,
    window: usize,
    geometry: &GridGeometry,
) -> Result<Vec<TrackWindow>, DataError> {
    let d = horizon_steps(delta)?;
    if window == 0 {
        return Err(DataError::Argument("window must be at least 1".into()));
    }
    geometry.validate()?;
    let span = window + d;
    let mut out = Vec::new();
    let mut run_start = 0;
    for k in 1..=track.len() {
        let broken = k == track.len()
            || ((track[k].t - track[k - 1].t) - RESAMPLE_PERIOD).abs() > SPACING_TOLERANCE;
        if !broken {
            continue;
        }
        let run = &track[run_start..k];
        if run.len() >= span {
            for j in 0..=run.len() - span {
                let steps = &run[j..j + window];
                let last = &steps[window - 1];
                let label = &run[j + window - 1 + d];
                out.push(TrackWindow {
                    features: steps.iter().map(RawSample::features).collect(),
                    label_grid: coord_to_label(geometry, label.x, label.y)?,
                    label_point: (label.x, label.y),
                    delta,
                    track_id: last.track_id.clone(),
                    t_end: last.t,
                    t_label: label.t,
                    geometry: *geometry,
                });
            }
        }
        run_start = k;
    }
    Ok(out)
}

/// Windows of many tracks, ordered by track id.
pub fn build_dataset(
    tracks: &[Track],
    delta: f64,
    window: usize,
    geometry: &GridGeometry,
    execution: Execution,
) -> Result<Vec<TrackWindow>, DataError> {
    let mut sorted: Vec<&Track> = tracks.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let per_track = execution.try_map(&sorted, |t| build_windows(&t.samples, delta, window, geometry))?;
    Ok(per_track.into_iter().flatten().collect())
}
