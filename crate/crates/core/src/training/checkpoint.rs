//! Checkpoint files.
//!
//! Layout (little-endian): magic `STNT`, `u32` format version, `u32` length
//! of a JSON metadata block, the JSON itself, then every parameter block in
//! model order (sites `0..N`, output tensor) as raw `f64` or `f32`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::data::parse_err;
use crate::error::{at_path, Result};
use crate::mps::MpsModel;
use crate::segmenter::{ModelConfig, Segmenter};
use crate::tensors::DenseTensor;

const MAGIC: &[u8; 4] = b"STNT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    model: ModelConfig,
    #[serde(default)]
    train: Option<TrainConfig>,
    dtype: Precision,
    shapes: Vec<Vec<usize>>,
}

/// A decoded checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Segmenter,
    pub train: Option<TrainConfig>,
}

pub fn encode_checkpoint(model: &Segmenter, train: Option<&TrainConfig>, precision: Precision) -> Result<Vec<u8>> {
    let meta = Metadata {
        model: model.config().clone(),
        train: train.cloned(),
        dtype: precision,
        shapes: model.mps().shapes(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(12 + json.len() + model.mps().num_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for &v in model.mps().params().flatten() {
        match precision {
            Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
            Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(parse_err(0, "not a checkpoint (expected magic STNT)"));
    }
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| parse_err(bytes.len(), "truncated checkpoint header"))
    };
    let version = word(4)?;
    if version != FORMAT_VERSION {
        return Err(parse_err(4, format!("unsupported checkpoint version {version}")));
    }
    let json_len = word(8)? as usize;
    let json = bytes
        .get(12..12 + json_len)
        .ok_or_else(|| parse_err(bytes.len(), "truncated checkpoint metadata"))?;
    let meta: Metadata = serde_json::from_slice(json).map_err(|e| parse_err(12, format!("bad metadata: {e}")))?;
    let width = match meta.dtype {
        Precision::F64 => 8,
        Precision::F32 => 4,
    };
    let mut at = 12 + json_len;
    let mut blocks = Vec::with_capacity(meta.shapes.len());
    for shape in &meta.shapes {
        let count: usize = shape.iter().product();
        let raw = bytes
            .get(at..at + count * width)
            .ok_or_else(|| parse_err(bytes.len(), "truncated parameter payload"))?;
        let data = raw
            .chunks_exact(width)
            .map(|b| match meta.dtype {
                Precision::F64 => f64::from_le_bytes(b.try_into().unwrap()),
                Precision::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            })
            .collect();
        blocks.push(DenseTensor::new(shape.clone(), data).map_err(|e| parse_err(at, e.to_string()))?);
        at += count * width;
    }
    if at != bytes.len() {
        return Err(parse_err(at, "trailing bytes after parameters"));
    }
    let output = blocks.pop().ok_or_else(|| parse_err(12, "checkpoint has no tensors"))?;
    let mps = MpsModel::from_parts(blocks, output)?;
    Ok(Checkpoint {
        model: Segmenter::from_parts(meta.model, mps)?,
        train: meta.train,
    })
}

pub fn save_checkpoint(path: &Path, model: &Segmenter, train: Option<&TrainConfig>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, train, Precision::F64)?).map_err(|e| at_path(path)(e.into()))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| at_path(path)(e.into()))?;
    decode_checkpoint(&bytes).map_err(at_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featuremaps::LocalFeatureMap;
    use crate::Error;

    fn segmenter() -> Segmenter {
        let cfg = ModelConfig {
            dims: 2,
            patch_size: 2,
            bond_dim: 3,
            feature_map: LocalFeatureMap::default(),
            channels: 2,
            classes: 1,
        };
        Segmenter::new(cfg, 12).unwrap()
    }

    #[test]
    fn round_trip_f64_is_exact() {
        let s = segmenter();
        let bytes = encode_checkpoint(&s, Some(&TrainConfig::default()), Precision::F64).unwrap();
        assert_eq!(&bytes[..4], b"STNT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.model, s);
        assert_eq!(ck.train, Some(TrainConfig::default()));
    }

    #[test]
    fn round_trip_f32_is_close() {
        let s = segmenter();
        let ck = decode_checkpoint(&encode_checkpoint(&s, None, Precision::F32).unwrap()).unwrap();
        for (a, b) in s.mps().params().flatten().zip(ck.model.mps().params().flatten()) {
            assert!((a - b).abs() <= 1e-7 * a.abs().max(1e-3));
        }
    }

    #[test]
    fn corrupt_files() {
        let bytes = encode_checkpoint(&segmenter(), None, Precision::F64).unwrap();
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 1]),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            decode_checkpoint(b"NOPE"),
            Err(Error::Parse { offset: 0, .. })
        ));
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(decode_checkpoint(&wrong).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
