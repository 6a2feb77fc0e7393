//! JSON parameter checkpoints.
//!
//! Layout (one JSON object):
//!
//! ```text
//! {
//!   "format": "survmtl-checkpoint",
//!   "version": 1,
//!   "model": { ...ModelConfig... },
//!   "meta": { ...free-form, e.g. the experiment config... },
//!   "params": [ { "name": "agg.fwd.i.wx", "rows": 16, "cols": 16, "data": [...] }, ... ]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! round-tripping, so save followed by load reproduces every bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "survmtl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTensor<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<T> {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: Vec<CheckpointTensor<T>>,
}

impl<T: Scalar + Serialize + DeserializeOwned> Checkpoint<T> {
    pub fn from_params(params: &ModelParams<T>, meta: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: params.config().clone(),
            meta,
            params: params
                .entries()
                .iter()
                .map(|e| CheckpointTensor {
                    name: e.name.clone(),
                    rows: e.tensor.rows,
                    cols: e.tensor.cols,
                    data: e.tensor.data.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds parameters, checking every name and shape against the layout
    /// implied by the stored model config.
    pub fn to_params(&self) -> Result<ModelParams<T>, ModelError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let mut params = ModelParams::zeros(&self.model)?;
        if params.entries().len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                params.entries().len(),
                self.params.len()
            )));
        }
        for (entry, stored) in params.entries_mut().iter_mut().zip(&self.params) {
            if entry.name != stored.name
                || entry.tensor.rows != stored.rows
                || entry.tensor.cols != stored.cols
                || stored.data.len() != stored.rows * stored.cols
            {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {} ({}x{}) does not match expected {} ({}x{})",
                    stored.name, stored.rows, stored.cols, entry.name, entry.tensor.rows, entry.tensor.cols
                )));
            }
            entry.tensor.data.clone_from(&stored.data);
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let io = |e: std::io::Error| ModelError::Checkpoint(format!("{}: {e}", path.display()));
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        serde_json::to_writer(&mut w, self).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file = File::open(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_is_bit_exact() {
        let cfg = ModelConfig {
            hidden_dim: 6,
            pvector_dim: 5,
            ..Default::default()
        };
        let mut params = ModelParams::<f64>::init(&cfg, 42).unwrap();
        // awkward values: subnormal, negative zero, many digits
        params.entries_mut()[0].tensor.data[0] = 5e-324;
        params.entries_mut()[0].tensor.data[1] = -0.0;
        params.entries_mut()[0].tensor.data[2] = 0.1 + 0.2;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::from_params(&params, serde_json::json!({"seed": 42}))
            .save(&path)
            .unwrap();
        let loaded = Checkpoint::<f64>::load(&path).unwrap();
        assert_eq!(loaded.meta["seed"], 42);
        let back = loaded.to_params().unwrap();
        for (a, b) in params.entries().iter().zip(back.entries()) {
            assert_eq!(a.name, b.name);
            assert!(a
                .tensor
                .data
                .iter()
                .zip(&b.tensor.data)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let params = ModelParams::<f64>::zeros(&ModelConfig::default()).unwrap();
        let mut ck = Checkpoint::from_params(&params, serde_json::Value::Null);
        ck.params[3].rows += 1;
        assert!(matches!(ck.to_params(), Err(ModelError::Checkpoint(_))));
        ck.params.pop();
        assert!(ck.to_params().is_err());
    }
}
