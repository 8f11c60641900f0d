//! JSON parameter manifest: a version, free-form metadata, and named tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AutodiffError, Result, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: &Tensor) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: tensor.shape().to_vec(),
            values: tensor.data().to_vec(),
        });
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let entry = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| AutodiffError::Checkpoint(format!("missing tensor {name:?}")))?;
        Tensor::new(entry.shape.clone(), entry.values.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| AutodiffError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        match raw.get("version").and_then(serde_json::Value::as_u64) {
            None => return Err(AutodiffError::Checkpoint("missing version field".into())),
            Some(v) if v != u64::from(CHECKPOINT_VERSION) => {
                return Err(AutodiffError::Checkpoint(format!("unsupported checkpoint version {v}")))
            }
            Some(_) => {}
        }
        let ckpt: Checkpoint = serde_json::from_value(raw).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        for t in &ckpt.tensors {
            if t.shape.iter().product::<usize>() != t.values.len() {
                return Err(AutodiffError::Checkpoint(format!(
                    "tensor {:?} shape/value mismatch",
                    t.name
                )));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the serialized manifest, hex encoded.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}
