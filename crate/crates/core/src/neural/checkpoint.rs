//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "TGRIDCKP"
//! version      u32
//! header_len   u32
//! header       JSON metadata (horizon, geometry, layer dims, head,
//!              init recipe, normalization constants, provenance)
//! n_tensors    u32                      -+
//! per tensor:  u16 name_len, name,       | tensor payload
//!              u8 ndim, u64 dims[ndim],  |
//!              f64 values (row-major)   -+
//! checksum     32 bytes SHA-256 of the tensor payload
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::network::{
    Architecture, HeadKind, InitRecipe, NetworkParams, Normalization, Provenance, Weights,
};
use crate::grid::GridGeometry;

pub const MAGIC: &[u8; 8] = b"TGRIDCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("tensor {name}: {reason}")]
    Shape { name: String, reason: String },
    #[error("checksum mismatch: tensor payload is corrupted")]
    Checksum,
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerDims {
    input: usize,
    input_fc: Vec<usize>,
    lstm: Vec<usize>,
    output_fc: Vec<usize>,
    head_outputs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    delta_seconds: f64,
    geometry: GridGeometry,
    layer_dims: LayerDims,
    head_kind: HeadKind,
    fc_activation: String,
    init_recipe: InitRecipe,
    input_normalization: Normalization,
    output_normalization: Normalization,
    provenance: Provenance,
}

pub fn to_bytes(params: &NetworkParams) -> Vec<u8> {
    let arch = params.architecture();
    let header = Header {
        format_version: FORMAT_VERSION,
        delta_seconds: params.delta,
        geometry: params.geometry,
        layer_dims: LayerDims {
            input: super::FeatureVector::LEN,
            input_fc: arch.input_fc,
            lstm: arch.lstm,
            output_fc: arch.output_fc,
            head_outputs: params.weights.head.output_size(),
        },
        head_kind: params.head,
        fc_activation: "tanh".into(),
        init_recipe: params.init.clone(),
        input_normalization: params.input_norm.clone(),
        output_normalization: params.output_norm.clone(),
        provenance: params.provenance.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");

    let mut payload = Vec::new();
    let specs = params.weights.specs();
    payload.extend_from_slice(&(specs.len() as u32).to_le_bytes());
    for (spec, data) in specs.iter().zip(params.weights.slices()) {
        payload.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
        payload.extend_from_slice(spec.name.as_bytes());
        payload.push(spec.shape.len() as u8);
        for &d in &spec.shape {
            payload.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(16 + header.len() + payload.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Truncated(what.to_string()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<NetworkParams, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format_version != version {
        return Err(CheckpointError::Header("header version disagrees with preamble".into()));
    }

    let payload_start = r.pos;
    let arch = Architecture {
        input_fc: header.layer_dims.input_fc.clone(),
        lstm: header.layer_dims.lstm.clone(),
        output_fc: header.layer_dims.output_fc.clone(),
        head: header.head_kind,
    };
    arch.validate()
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    header
        .geometry
        .validate()
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.layer_dims.input != super::FeatureVector::LEN
        || header.layer_dims.head_outputs != header.head_kind.output_size(&header.geometry)
    {
        return Err(CheckpointError::Header("layer dimensions are inconsistent".into()));
    }
    let mut weights = Weights::zeros(&arch, &header.geometry);
    let specs = weights.specs();
    let count = r.u32("tensor count")? as usize;
    if count != specs.len() {
        return Err(CheckpointError::Shape {
            name: "<all>".into(),
            reason: format!("expected {} tensors, found {count}", specs.len()),
        });
    }
    for (spec, dest) in specs.iter().zip(weights.slices_mut()) {
        let name_len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| CheckpointError::Header("tensor name is not UTF-8".into()))?;
        if name != spec.name {
            return Err(CheckpointError::Shape {
                name: name.to_string(),
                reason: format!("expected tensor {}", spec.name),
            });
        }
        let ndim = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("tensor dims")?);
        }
        let expected: Vec<u64> = spec.shape.iter().map(|&d| d as u64).collect();
        if shape != expected {
            return Err(CheckpointError::Shape {
                name: spec.name.clone(),
                reason: format!("shape {shape:?}, expected {expected:?}"),
            });
        }
        let n = dest.len();
        if r.remaining() < n * 8 {
            return Err(CheckpointError::Truncated(format!("tensor {}", spec.name)));
        }
        for v in dest.iter_mut() {
            *v = f64::from_le_bytes(r.take(8, "tensor data")?.try_into().unwrap());
        }
    }
    let payload = &bytes[payload_start..r.pos];
    let checksum = r.take(32, "checksum")?;
    if Sha256::digest(payload).as_slice() != checksum {
        return Err(CheckpointError::Checksum);
    }
    if r.remaining() != 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()));
    }

    let params = NetworkParams {
        weights,
        head: header.head_kind,
        geometry: header.geometry,
        delta: header.delta_seconds,
        input_norm: header.input_normalization,
        output_norm: header.output_normalization,
        init: header.init_recipe,
        provenance: header.provenance,
    };
    params
        .validate()
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok(params)
}

pub fn save_checkpoint(params: &NetworkParams, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkParams, CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Normalization;

    fn sample(head: HeadKind) -> NetworkParams {
        let arch = Architecture {
            input_fc: vec![5],
            lstm: vec![4, 3],
            output_fc: vec![6],
            head,
        };
        let mut p = NetworkParams::init(
            &arch,
            GridGeometry::centered(3, 3, 2.0, 1.0).unwrap(),
            0.5,
            Normalization {
                mean: vec![1.0 / 3.0, 0.1, 0.2, 0.3, 0.4, 0.5],
                scale: vec![std::f64::consts::PI, 1.0, 2.0, 3.0, 4.0, 5.0],
            },
            Normalization {
                mean: vec![0.7, -0.1],
                scale: vec![1.3, 0.9],
            },
            42,
        )
        .unwrap();
        p.provenance.split_seed = 9;
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for head in [HeadKind::Grid, HeadKind::Regression] {
            let p = sample(head);
            let bytes = to_bytes(&p);
            let q = from_bytes(&bytes).unwrap();
            assert_eq!(p, q);
            for (a, b) in p.weights.slices().iter().zip(q.weights.slices()) {
                assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            assert_eq!(to_bytes(&q), bytes);
        }
    }

    #[test]
    fn delta_is_persisted() {
        let q = from_bytes(&to_bytes(&sample(HeadKind::Grid))).unwrap();
        assert_eq!(q.delta, 0.5);
    }

    #[test]
    fn corrupted_header_length_is_an_error() {
        let mut bytes = to_bytes(&sample(HeadKind::Grid));
        bytes[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(from_bytes(&bytes), Err(CheckpointError::Truncated(_))));
    }

    #[test]
    fn corrupted_dimension_is_an_error() {
        let p = sample(HeadKind::Grid);
        let mut bytes = to_bytes(&p);
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        // First tensor: u32 count, u16 name_len, name, u8 ndim, then dims.
        let name_len = "input_fc.0.weight".len();
        let dim_at = 16 + header_len + 4 + 2 + name_len + 1;
        bytes[dim_at..dim_at + 8].copy_from_slice(&(1u64 << 60).to_le_bytes());
        assert!(matches!(from_bytes(&bytes), Err(CheckpointError::Shape { .. })));
    }

    #[test]
    fn distinct_errors() {
        let bytes = to_bytes(&sample(HeadKind::Regression));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 40]), Err(CheckpointError::Truncated(_))));
        assert!(matches!(from_bytes(&[]), Err(CheckpointError::Truncated(_))));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(CheckpointError::BadMagic)));

        let mut bad = bytes.clone();
        bad[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            from_bytes(&bad),
            Err(CheckpointError::Version { found: 7, expected: 1 })
        ));

        let mut bad = bytes.clone();
        let k = bad.len() - 40;
        bad[k] ^= 0x01;
        assert!(matches!(from_bytes(&bad), Err(CheckpointError::Checksum)));

        let mut bad = bytes;
        bad.push(0);
        assert!(matches!(from_bytes(&bad), Err(CheckpointError::TrailingBytes(1))));
    }
}
