//! Self-describing single-file JSON checkpoints.
//!
//! Every tensor is stored by name with its shape and row-major values.
//! Floats are written in the shortest form that parses back to the same
//! bits, so a save/load cycle reproduces forward passes exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::models::{ModelParams, ModelSpec};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::train::OptimizerState;

pub const FORMAT: &str = "temporal-embed-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    /// Completed epochs when the snapshot was taken.
    pub epoch: usize,
    pub tensors: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn capture(
        params: &ModelParams,
        epoch: usize,
        optimizer: Option<&OptimizerState>,
        rng: Option<RngState>,
    ) -> Self {
        let tensors = params
            .named_tensors()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: [t.rows(), t.cols()],
                values: t.into_data(),
            })
            .collect();
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            spec: params.spec.clone(),
            epoch,
            tensors,
            optimizer: optimizer.cloned(),
            rng,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        let named = self
            .tensors
            .iter()
            .map(|t| {
                Tensor::new(t.shape[0], t.shape[1], t.values.clone())
                    .map(|v| (t.name.clone(), v))
                    .map_err(|e| Error::Format(format!("tensor `{}`: {e}", t.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        ModelParams::from_named(&self.spec, &named)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("invalid checkpoint: {e}")))?;
        if ck.format != FORMAT {
            return Err(Error::Format(format!("not a checkpoint (format `{}`)", ck.format)));
        }
        if ck.version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {} (expected {VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsio::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Format("checkpoint is not UTF-8".into()))?;
        Self::from_json(&text)
    }
}
