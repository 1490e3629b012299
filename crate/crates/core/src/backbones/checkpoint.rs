//! Encoder checkpoint: a JSON document
//!
//! ```text
//! { "format": "mgm-encoder", "version": 1,
//!   "config": EncoderConfig, "in_dim": F, "n_classes": C,
//!   "params": [ { "name", "group", "tensor": { "shape", "data" } }, ... ] }
//! ```
//!
//! Parameters are listed in creation order: `encoder.<k>.weight`,
//! `encoder.<k>.bias` for each layer, then `head.weight`, `head.bias`.
//! Loading rebuilds the structure from the config and checks that names and
//! shapes match.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::backbones::{EncoderConfig, GnnModel};
use crate::error::{MgmError, Result};
use crate::rng::SeedStreams;

pub const ENCODER_FORMAT: &str = "mgm-encoder";
pub const ENCODER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: EncoderConfig,
    pub in_dim: usize,
    pub n_classes: usize,
    pub params: ParamSet,
}

impl EncoderCheckpoint {
    pub fn from_model(model: &GnnModel) -> Self {
        let mut params = model.params.clone();
        params.clear_grads();
        EncoderCheckpoint {
            format: ENCODER_FORMAT.into(),
            version: ENCODER_VERSION,
            config: model.encoder.config().clone(),
            in_dim: model.encoder.in_dim(),
            n_classes: model.n_classes(),
            params,
        }
    }

    /// Rebuilds the model; fails if the stored parameters do not fit.
    pub fn into_model(self) -> Result<GnnModel> {
        if self.format != ENCODER_FORMAT || self.version != ENCODER_VERSION {
            return Err(MgmError::Config(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut rng = SeedStreams::new(0).stream("init");
        let mut model = GnnModel::new(&self.config, self.in_dim, self.n_classes, &mut rng)?;
        model.params.load_values(&self.params)?;
        Ok(model)
    }
}

pub fn save_encoder_checkpoint(model: &GnnModel, path: &Path) -> Result<()> {
    let json = serde_json::to_string(&EncoderCheckpoint::from_model(model))?;
    fs::write(path, json).map_err(|e| MgmError::io(path, e))
}

pub fn load_encoder_checkpoint(path: &Path) -> Result<GnnModel> {
    let text = fs::read_to_string(path).map_err(|e| MgmError::io(path, e))?;
    let ckpt: EncoderCheckpoint = serde_json::from_str(&text)?;
    ckpt.into_model()
}
