use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::losses::LossHyper;
use crate::model::{ModelDims, ModelParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHyper {
    #[serde(flatten)]
    pub dims: ModelDims,
    #[serde(flatten)]
    pub loss: LossHyper,
    /// Optimizer steps taken when the checkpoint was written.
    pub iteration: usize,
}

/// Model parameters plus the hyperparameters needed to run inference.
/// Values are written with shortest round-trip formatting, so a
/// save/load cycle is value-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub hyperparams: CheckpointHyper,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, loss: LossHyper, iteration: usize) -> Result<Self> {
        let dims = params.dims()?;
        let mut stored = BTreeMap::new();
        for (name, t) in params.names().into_iter().zip(params.entries()) {
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
            stored.insert(
                name,
                StoredTensor {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                },
            );
        }
        Ok(Self {
            format_version: FORMAT_VERSION,
            hyperparams: CheckpointHyper {
                dims,
                loss,
                iteration,
            },
            params: stored,
        })
    }

    /// Rebuilds the parameter set, checking names and shapes.
    pub fn params(&self) -> Result<ModelParams> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::invalid(
                "checkpoint",
                format!("unsupported format_version {}", self.format_version),
            ));
        }
        let mut params = ModelParams::init(self.hyperparams.dims, 0)?;
        let names = params.names();
        if names.len() != self.params.len() {
            return Err(Error::invalid(
                "checkpoint",
                format!("expected {} tensors, found {}", names.len(), self.params.len()),
            ));
        }
        for (name, slot) in names.iter().zip(params.entries_mut()) {
            let stored = self
                .params
                .get(name)
                .ok_or_else(|| Error::invalid("checkpoint", format!("missing tensor {name}")))?;
            if stored.shape != slot.shape() {
                return Err(Error::Dimension {
                    layer: name.clone(),
                    expected: slot.numel(),
                    actual: stored.data.len(),
                });
            }
            *slot = Tensor::new(stored.shape.clone(), stored.data.clone())
                .map_err(|e| Error::invalid(format!("checkpoint tensor {name}"), e.to_string()))?;
        }
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = read_json(path)?;
        ckpt.hyperparams.loss.validate()?;
        ckpt.params()?;
        Ok(ckpt)
    }
}
