use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grid::GridGeometry;
use crate::parallel::Execution;

use super::windows::build_dataset;
use super::{DataError, DatasetSplit, Track, TrackWindow};

/// Shuffles the distinct track ids with `seed` and assigns the first
/// `round(ratio * n)` of them (at least one, at most `n - 1`) to training.
pub fn split_by_track(
    windows: Vec<TrackWindow>,
    ratio: f64,
    seed: u64,
) -> Result<DatasetSplit, DataError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::Argument(format!("ratio must be in (0, 1), got {ratio}")));
    }
    let ids: BTreeSet<&str> = windows.iter().map(|w| w.track_id.as_str()).collect();
    let n = ids.len();
    if n < 2 {
        return Err(DataError::Argument(format!(
            "need at least 2 tracks to split, got {n}"
        )));
    }
    let mut ids: Vec<String> = ids.into_iter().map(str::to_owned).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let train_ids: HashSet<String> = ids.into_iter().take(n_train).collect();
    let (train, validation) = windows
        .into_iter()
        .partition(|w| train_ids.contains(&w.track_id));
    Ok(DatasetSplit {
        train,
        validation,
        seed,
        ratio,
    })
}

/// Windows every track and splits the result by vehicle. Fails with a
/// message naming the length requirement when no track yields a window.
pub fn prepare_split(
    tracks: &[Track],
    delta: f64,
    window: usize,
    geometry: &GridGeometry,
    ratio: f64,
    seed: u64,
    execution: Execution,
) -> Result<DatasetSplit, DataError> {
    let windows = build_dataset(tracks, delta, window, geometry, execution)?;
    if windows.is_empty() {
        let needed = window + (delta / super::RESAMPLE_PERIOD).round() as usize;
        return Err(DataError::Argument(format!(
            "no track has {needed} consecutive 100 ms samples (window {window} + horizon {delta} s)"
        )));
    }
    split_by_track(windows, ratio, seed)
}
