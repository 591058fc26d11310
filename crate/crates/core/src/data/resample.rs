use super::{DataError, RawSample, Track};

/// Output sample period of the resampler, seconds.
pub const RESAMPLE_PERIOD: f64 = 0.1;

const BIN_NS: i64 = 100_000_000;

/// Index of the 100 ms bin containing `t`. Times are snapped to whole
/// nanoseconds first so that decimal timestamps land in the expected bin.
pub fn bin_index(t: f64) -> i64 {
    ((t * 1e9).round() as i64).div_euclid(BIN_NS)
}

/// Averages the samples of one track over contiguous 100 ms bins.
///
/// Each output carries the mean of every field in its bin and is stamped at
/// the bin center. Empty bins produce nothing.
pub fn resample_100ms(samples: &[RawSample]) -> Result<Vec<RawSample>, DataError> {
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    for (k, s) in samples.iter().enumerate() {
        if !s.is_finite() {
            return Err(DataError::Argument(format!("sample {k} has a non-finite field")));
        }
        if s.track_id != first.track_id {
            return Err(DataError::Argument(format!(
                "sample {k} belongs to track {}, expected {}",
                s.track_id, first.track_id
            )));
        }
        if k > 0 && s.t <= samples[k - 1].t {
            return Err(DataError::Argument(format!(
                "timestamps not strictly increasing at sample {k} ({} after {})",
                s.t,
                samples[k - 1].t
            )));
        }
    }

    let mut out = Vec::new();
    let mut start = 0;
    while start < samples.len() {
        let bin = bin_index(samples[start].t);
        let mut end = start + 1;
        while end < samples.len() && bin_index(samples[end].t) == bin {
            end += 1;
        }
        out.push(mean_of(&samples[start..end], bin));
        start = end;
    }
    Ok(out)
}

/// [`resample_100ms`] applied to a whole track.
pub fn resample_track(track: &Track) -> Result<Track, DataError> {
    Ok(Track {
        id: track.id.clone(),
        samples: resample_100ms(&track.samples)?,
    })
}

fn mean_of(bin: &[RawSample], index: i64) -> RawSample {
    let n = bin.len() as f64;
    let mean = |f: fn(&RawSample) -> f64| bin.iter().map(f).sum::<f64>() / n;
    RawSample {
        t: (index as f64 + 0.5) * RESAMPLE_PERIOD,
        track_id: bin[0].track_id.clone(),
        x: mean(|s| s.x),
        y: mean(|s| s.y),
        vx: mean(|s| s.vx),
        vy: mean(|s| s.vy),
        ego_yaw_rate: mean(|s| s.ego_yaw_rate),
        ego_speed: mean(|s| s.ego_speed),
    }
}
