//! Binary checkpoint: magic, JSON header, aligned little-endian tensor blobs.
//!
//! Layout:
//!
//! ```text
//! b"PASURF01"            8 bytes
//! header length          u64 little-endian
//! header                 UTF-8 JSON
//! zero padding           up to the next multiple of 64 from file start
//! tensor blobs           little-endian, in header table order
//! ```
//!
//! Tensor offsets in the header are relative to the start of the blob region.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, ModelState, Prediction};
use crate::nn::ParamSet;
use crate::pointcloud::{NormalizationStats, PointCloud};
use crate::real::{Precision, Real};

pub const MAGIC: &[u8; 8] = b"PASURF01";
pub const CHECKPOINT_VERSION: u32 = 1;
const ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub dtype: String,
    pub config: ModelConfig,
    pub stats: NormalizationStats,
    pub tensors: Vec<TensorEntry>,
}

fn padded(len: usize) -> usize {
    len.div_ceil(ALIGN) * ALIGN
}

pub fn encode<T: Real>(model: &ModelState<T>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    model.params.visit("", &mut |name, m| {
        let nbytes = m.len() * T::BYTES;
        tensors.push(TensorEntry { name, shape: [m.rows(), m.cols()], offset, nbytes });
        offset += nbytes;
    });
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        dtype: T::DTYPE.to_string(),
        config: model.config.clone(),
        stats: model.stats.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(format!("header encode: {e}")))?;
    let mut out = Vec::with_capacity(padded(16 + json.len()) + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.resize(padded(out.len()), 0);
    model.params.visit("", &mut |_, m| {
        for &v in m.as_slice() {
            v.put_le(&mut out);
        }
    });
    Ok(out)
}

/// Reads the magic, length prefix and header, returning the header and the
/// blob region.
pub fn decode_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 16 {
        return Err(Error::Format("checkpoint truncated before header".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic, not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("checkpoint truncated inside header".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..end]).map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    let start = padded(end);
    if start > bytes.len() {
        return Err(Error::Format("checkpoint truncated before tensor data".into()));
    }
    if bytes[end..start].iter().any(|&b| b != 0) {
        return Err(Error::Format("non-zero header padding".into()));
    }
    Ok((header, &bytes[start..]))
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<ModelState<T>> {
    let (header, blobs) = decode_header(bytes)?;
    if header.dtype != T::DTYPE {
        return Err(Error::Format(format!("checkpoint dtype is {}, expected {}", header.dtype, T::DTYPE)));
    }
    decode_body(header, blobs)
}

fn decode_body<T: Real>(header: Header, blobs: &[u8]) -> Result<ModelState<T>> {
    header.stats.validate()?;
    header.config.validate()?;
    let expected_bytes = header.config.num_params().and_then(|n| n.checked_mul(T::BYTES));
    if expected_bytes != Some(blobs.len()) {
        return Err(Error::Format(format!(
            "checkpoint holds {} tensor bytes, config implies {}",
            blobs.len(),
            expected_bytes.map_or("an overflowing count".to_string(), |n| n.to_string())
        )));
    }
    let mut params = ModelParams::<T>::init(&header.config)?;
    let mut expected = Vec::new();
    params.visit("", &mut |name, m| expected.push((name, [m.rows(), m.cols()])));
    if expected.len() != header.tensors.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, config implies {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut offset = 0;
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Format(format!(
                "tensor {} {:?} does not match config tensor {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        if entry.offset != offset || entry.nbytes != shape[0] * shape[1] * T::BYTES {
            return Err(Error::Format(format!("tensor {name} has inconsistent offset or size")));
        }
        offset += entry.nbytes;
    }
    let mut cursor = 0;
    let mut bad = None;
    params.visit_mut("", &mut |name, m| {
        for v in m.as_mut_slice() {
            *v = T::get_le(&blobs[cursor..cursor + T::BYTES]);
            cursor += T::BYTES;
        }
        if bad.is_none() && !m.all_finite() {
            bad = Some(name);
        }
    });
    if let Some(name) = bad {
        return Err(Error::NonFinite { what: format!("checkpoint tensor {name}") });
    }
    Ok(ModelState { config: header.config, stats: header.stats, params })
}

pub fn save_checkpoint<T: Real>(model: &ModelState<T>, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ModelState<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// A checkpoint of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    F32(ModelState<f32>),
    F64(ModelState<f64>),
}

impl AnyModel {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (header, blobs) = decode_header(bytes)?;
        match header.dtype.as_str() {
            "f32" => Ok(AnyModel::F32(decode_body(header, blobs)?)),
            "f64" => Ok(AnyModel::F64(decode_body(header, blobs)?)),
            other => Err(Error::Format(format!("unknown checkpoint dtype {other:?}"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        AnyModel::decode(&bytes)
    }

    pub fn precision(&self) -> Precision {
        match self {
            AnyModel::F32(_) => Precision::F32,
            AnyModel::F64(_) => Precision::F64,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            AnyModel::F32(m) => &m.config,
            AnyModel::F64(m) => &m.config,
        }
    }

    pub fn stats(&self) -> &NormalizationStats {
        match self {
            AnyModel::F32(m) => &m.stats,
            AnyModel::F64(m) => &m.stats,
        }
    }

    /// See [`ModelState::predict`].
    pub fn predict(&self, surface: &PointCloud, volume: &PointCloud) -> Result<Prediction> {
        match self {
            AnyModel::F32(m) => m.predict(surface, volume),
            AnyModel::F64(m) => m.predict(surface, volume),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn model() -> ModelState<f32> {
        init_model(&ModelConfig { seed: 9, ..ModelConfig::with_dims(1, 8, 3, 2) }, NormalizationStats::identity())
            .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let m = model();
        let bytes = encode(&m).unwrap();
        let back: ModelState<f32> = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn blobs_start_aligned() {
        let bytes = encode(&model()).unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let start = padded(16 + len);
        assert_eq!(start % 64, 0);
        let (header, blobs) = decode_header(&bytes).unwrap();
        let total: usize = header.tensors.iter().map(|t| t.nbytes).sum();
        assert_eq!(blobs.len(), total);
    }

    #[test]
    fn corrupt_magic_is_a_format_error() {
        let mut bytes = encode(&model()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode::<f32>(&bytes), Err(Error::Format(m)) if m.contains("magic")));
    }

    #[test]
    fn truncation_is_detected_everywhere() {
        let bytes = encode(&model()).unwrap();
        for cut in [0, 7, 15, 40, bytes.len() - 1] {
            assert!(decode::<f32>(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn version_and_dtype_mismatch() {
        let m = model();
        let bytes = encode(&m).unwrap();
        let (mut header, blobs) = decode_header(&bytes).unwrap();
        header.format_version = 2;
        let json = serde_json::to_vec(&header).unwrap();
        let mut forged = MAGIC.to_vec();
        forged.extend_from_slice(&(json.len() as u64).to_le_bytes());
        forged.extend_from_slice(&json);
        forged.resize(padded(forged.len()), 0);
        forged.extend_from_slice(blobs);
        assert!(matches!(decode::<f32>(&forged), Err(Error::Format(m)) if m.contains("version")));
        assert!(matches!(decode::<f64>(&bytes), Err(Error::Format(m)) if m.contains("dtype")));
        assert_eq!(AnyModel::decode(&bytes).unwrap(), AnyModel::F32(m));
    }

    #[test]
    fn shape_mismatch_against_config() {
        let bytes = encode(&model()).unwrap();
        let (mut header, blobs) = decode_header(&bytes).unwrap();
        header.config.slices = 4;
        let json = serde_json::to_vec(&header).unwrap();
        let mut forged = MAGIC.to_vec();
        forged.extend_from_slice(&(json.len() as u64).to_le_bytes());
        forged.extend_from_slice(&json);
        forged.resize(padded(forged.len()), 0);
        forged.extend_from_slice(blobs);
        assert!(matches!(decode::<f32>(&forged), Err(Error::Format(m)) if m.contains("config implies")));
        // Same byte count, renamed tensor.
        let (mut header, blobs) = decode_header(&bytes).unwrap();
        header.tensors[0].name = "embedding.kernel".into();
        let json = serde_json::to_vec(&header).unwrap();
        let mut forged = MAGIC.to_vec();
        forged.extend_from_slice(&(json.len() as u64).to_le_bytes());
        forged.extend_from_slice(&json);
        forged.resize(padded(forged.len()), 0);
        forged.extend_from_slice(blobs);
        assert!(matches!(decode::<f32>(&forged), Err(Error::Format(m)) if m.contains("does not match")));
    }
}
