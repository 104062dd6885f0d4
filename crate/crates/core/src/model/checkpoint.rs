use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::features::FEATURE_LAYOUT_ID;
use super::{ModelDims, ModelError, ModelParams};
use crate::numeric::Tensor;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Trained parameters plus the provenance needed to reject mismatched
/// loads. Tensor payloads are little-endian `f64` bytes in base64, so a
/// save/load cycle is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    schema_version: u32,
    feature_layout_id: String,
    config_hash: String,
    seed: u64,
    dims: ModelDims,
    tensors: BTreeMap<String, TensorRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    shape: Vec<usize>,
    data: TensorData,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TensorData {
    Base64(String),
    Floats(Vec<f64>),
}

fn encode_f64s(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_f64s(s: &str) -> Result<Vec<f64>, ModelError> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| ModelError::Checkpoint(format!("base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(ModelError::Checkpoint("payload not a multiple of 8 bytes".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let tensors = self
            .params
            .names()
            .iter()
            .zip(&self.params.tensors)
            .map(|(n, t)| {
                (
                    n.clone(),
                    TensorRecord {
                        shape: t.shape.clone(),
                        data: TensorData::Base64(encode_f64s(&t.data)),
                    },
                )
            })
            .collect();
        let file = CheckpointFile {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            feature_layout_id: FEATURE_LAYOUT_ID.to_string(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            dims: self.params.dims,
            tensors,
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let mut file: CheckpointFile = serde_json::from_str(s)?;
        if file.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(ModelError::SchemaVersionMismatch {
                what: "checkpoint schema",
                expected: CHECKPOINT_SCHEMA_VERSION.to_string(),
                found: file.schema_version.to_string(),
            });
        }
        if file.feature_layout_id != FEATURE_LAYOUT_ID {
            return Err(ModelError::SchemaVersionMismatch {
                what: "feature layout",
                expected: FEATURE_LAYOUT_ID.to_string(),
                found: file.feature_layout_id,
            });
        }
        let mut tensors = Vec::new();
        for (name, _) in file.dims.specs() {
            let rec = file
                .tensors
                .remove(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            let data = match rec.data {
                TensorData::Base64(s) => decode_f64s(&s)?,
                TensorData::Floats(v) => v,
            };
            tensors.push(
                Tensor::new(rec.shape, data)
                    .map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))?,
            );
        }
        if let Some(extra) = file.tensors.keys().next() {
            return Err(ModelError::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            params: ModelParams::from_parts(file.dims, tensors)?,
            config_hash: file.config_hash,
            seed: file.seed,
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        Checkpoint {
            params: ModelParams::init(ModelDims::uniform(3), 11),
            config_hash: "abc".into(),
            seed: 11,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut c = ckpt();
        c.params.tensors[0].data[0] = f64::MIN_POSITIVE / 3.0;
        c.params.tensors[1].data[0] = -0.0;
        let back = Checkpoint::from_json(&c.to_json()).unwrap();
        let (a, b) = (c.params.flat(), back.params.flat());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.config_hash, "abc");
    }

    #[test]
    fn float_array_payload_accepted() {
        let c = ckpt();
        let mut v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        let first = c.params.names()[0].clone();
        let floats = serde_json::json!(c.params.tensors[0].data);
        v["tensors"][&first]["data"] = floats;
        let back = Checkpoint::from_json(&v.to_string()).unwrap();
        assert_eq!(back.params, c.params);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let c = ckpt();
        let mut v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        v["feature_layout_id"] = serde_json::json!("node12/edge9");
        assert!(matches!(
            Checkpoint::from_json(&v.to_string()),
            Err(ModelError::SchemaVersionMismatch { .. })
        ));
        v["feature_layout_id"] = serde_json::json!(FEATURE_LAYOUT_ID);
        v["schema_version"] = serde_json::json!(99);
        assert!(matches!(
            Checkpoint::from_json(&v.to_string()),
            Err(ModelError::SchemaVersionMismatch { .. })
        ));
    }
}
