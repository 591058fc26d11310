use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};

use super::{DataError, RawSample, Track};

/// Reads a trajectory JSONL file into tracks, in order of first appearance.
/// Blank lines are skipped.
pub fn read_jsonl(path: &Path) -> Result<Vec<Track>, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut tracks: Vec<Track> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_line(&line, line_no)?;
        let slot = *index.entry(sample.track_id.clone()).or_insert_with(|| {
            tracks.push(Track {
                id: sample.track_id.clone(),
                samples: Vec::new(),
            });
            tracks.len() - 1
        });
        tracks[slot].samples.push(sample);
    }
    Ok(tracks)
}

fn parse_line(line: &str, line_no: usize) -> Result<RawSample, DataError> {
    let value: Value = serde_json::from_str(line).map_err(|e| DataError::Parse {
        line: line_no,
        reason: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(DataError::Parse {
            line: line_no,
            reason: "record is not a JSON object".into(),
        });
    };
    let num = |field: &str| number(&obj, field, line_no);
    let track_id = match obj.get("track_id") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(schema(line_no, "track_id", "expected a string")),
        None => return Err(schema(line_no, "track_id", "missing")),
    };
    Ok(RawSample {
        t: num("t")?,
        track_id,
        x: num("x")?,
        y: num("y")?,
        vx: num("vx")?,
        vy: num("vy")?,
        ego_yaw_rate: num("ego_yaw_rate")?,
        ego_speed: num("ego_speed")?,
    })
}

fn number(obj: &Map<String, Value>, field: &str, line_no: usize) -> Result<f64, DataError> {
    match obj.get(field) {
        Some(Value::Number(n)) => n
            .as_f64()
            .ok_or_else(|| schema(line_no, field, "number out of range")),
        Some(_) => Err(schema(line_no, field, "expected a number")),
        None => Err(schema(line_no, field, "missing")),
    }
}

fn schema(line: usize, field: &str, reason: &str) -> DataError {
    DataError::Schema {
        line,
        field: field.into(),
        reason: reason.into(),
    }
}

/// Writes every sample of every track as one JSON object per line.
pub fn write_jsonl_to<W: Write>(mut out: W, tracks: &[Track]) -> Result<(), DataError> {
    for track in tracks {
        for s in &track.samples {
            if !s.is_finite() {
                return Err(DataError::Argument(format!(
                    "track {} has a non-finite sample at t={}",
                    track.id, s.t
                )));
            }
            serde_json::to_writer(&mut out, s).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_jsonl(path: &Path, tracks: &[Track]) -> Result<(), DataError> {
    write_jsonl_to(BufWriter::new(File::create(path)?), tracks)
}
