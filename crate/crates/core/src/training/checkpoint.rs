use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scenes::Standardizer;

pub const CHECKPOINT_VERSION: &str = "smooth-traj-checkpoint/1";

/// One named `rows x cols` array, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Trained model state as a single TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub config: TrainConfig,
    pub standardizer: Standardizer,
    pub history: Vec<EpochRecord>,
    pub params: Vec<ParamArray>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        config: &TrainConfig,
        standardizer: Standardizer,
        history: Vec<EpochRecord>,
        val_loss: Option<f64>,
    ) -> Self {
        let params = model
            .params
            .entries()
            .iter()
            .map(|e| ParamArray {
                name: e.name.clone(),
                rows: e.rows,
                cols: e.cols,
                values: model.params.flat()[e.offset..e.offset + e.len()].to_vec(),
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION.to_string(),
            epoch: history.len(),
            val_loss,
            config: config.clone(),
            standardizer,
            history,
            params,
        }
    }

    /// Rebuilds the model; every registered array must be present with its
    /// registered shape.
    pub fn model(&self) -> Result<Model> {
        let mut m = Model::zeros(&self.config.model())?;
        if self.params.len() != m.params.entries().len() {
            return Err(Error::validation(format!(
                "checkpoint has {} arrays, model expects {}",
                self.params.len(),
                m.params.entries().len()
            )));
        }
        for a in &self.params {
            m.params.set_named(&a.name, a.rows, a.cols, &a.values)?;
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation(format!("checkpoint serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let ck: Self = toml::from_str(text).map_err(|e| Error::validation(format!("checkpoint: {}", e.message())))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!(
                "unsupported checkpoint version `{}`, expected `{CHECKPOINT_VERSION}`",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Equality of everything except per-epoch wall times.
    pub fn same_training(&self, other: &Self) -> bool {
        self.version == other.version
            && self.epoch == other.epoch
            && self.val_loss.map(f64::to_bits) == other.val_loss.map(f64::to_bits)
            && self.config == other.config
            && self.standardizer == other.standardizer
            && self.params == other.params
            && self.history.len() == other.history.len()
            && self.history.iter().zip(&other.history).all(|(a, b)| a.same_losses(b))
    }
}
