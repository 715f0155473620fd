//! JSON checkpoints.
//!
//! ```text
//! {
//!   "format": "deform-gnn-checkpoint-v1",
//!   "config": { ...ModelConfig... },
//!   "num_features": 32,
//!   "num_classes": 5,
//!   "params": [ { "name": "encoder.weight", "shape": [32, 64], "values": [...] }, ... ]
//! }
//! ```
//!
//! Values are row-major and round-trip exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "deform-gnn-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub num_features: usize,
    pub num_classes: usize,
    pub params: Vec<CheckpointParam>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            config: model.config().clone(),
            num_features: model.num_features(),
            num_classes: model.num_classes(),
            params: model
                .params()
                .iter()
                .map(|p| CheckpointParam {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model, checking every tensor's name and shape.
    pub fn into_model(self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {:?}", self.format)));
        }
        let mut model = Model::new(self.config, self.num_features, self.num_classes, 0)?;
        let expected = model.params().len();
        if self.params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, model has {expected}",
                self.params.len()
            )));
        }
        for stored in self.params {
            let idx = model
                .params()
                .find(&stored.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {:?}", stored.name)))?;
            let slot = model.params_mut().get_mut(idx);
            if slot.value.shape() != stored.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} has shape {:?}, expected {:?}",
                    stored.name,
                    stored.shape,
                    slot.value.shape()
                )));
            }
            let value = Tensor::new(stored.shape, stored.values)
                .map_err(|e| Error::Checkpoint(format!("tensor {:?}: {e}", stored.name)))?;
            if !value.is_finite() {
                return Err(Error::Checkpoint(format!("tensor {:?} has non-finite values", stored.name)));
            }
            slot.value = value;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl Model {
    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_model(self).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::load(path)?.into_model()
    }
}
