//! Trained-model checkpoint: one JSON document
//!
//! ```text
//! { "format": "mgm-model", "version": 1,
//!   "encoder": <encoder checkpoint>, "posterior": [ params... ],
//!   "config": MgmConfig, "memory": MemoryBank, "sampled": MemoryBank }
//! ```
//!
//! `posterior` holds the parameters added on top of the encoder and head,
//! in creation order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::backbones::EncoderCheckpoint;
use crate::error::{MgmError, Result};
use crate::memory::MemoryBank;
use crate::rng::SeedStreams;

use super::config::MgmConfig;
use super::model::MgmModel;

pub const MODEL_FORMAT: &str = "mgm-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgmCheckpoint {
    pub format: String,
    pub version: u32,
    pub encoder: EncoderCheckpoint,
    pub posterior: ParamSet,
    pub config: MgmConfig,
    pub memory: MemoryBank,
    pub sampled: MemoryBank,
}

fn split_params(all: &ParamSet, at: usize) -> (ParamSet, ParamSet) {
    let (mut head, mut tail) = (ParamSet::new(), ParamSet::new());
    for (id, p) in all.iter() {
        let mut t = p.tensor.clone();
        t.clear_grad();
        let dst = if id.0 < at { &mut head } else { &mut tail };
        dst.add(p.name.clone(), p.group, t);
    }
    (head, tail)
}

impl MgmCheckpoint {
    pub fn new(model: &MgmModel, memory: &MemoryBank, sampled: &MemoryBank) -> Self {
        let (gnn_params, posterior) = split_params(model.params(), model.sigma.0);
        let mut gnn = model.gnn.clone();
        gnn.params = gnn_params;
        MgmCheckpoint {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            encoder: EncoderCheckpoint::from_model(&gnn),
            posterior,
            config: model.config.clone(),
            memory: memory.clone(),
            sampled: sampled.clone(),
        }
    }

    /// Rebuilds the model and returns it with the full and sampled memories.
    pub fn into_parts(self) -> Result<(MgmModel, MemoryBank, MemoryBank)> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(MgmError::Config(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let gnn = self.encoder.into_model()?;
        let mut stored = gnn.params.clone();
        let mut rng = SeedStreams::new(0).stream("mgm-init");
        let mut model = MgmModel::new(gnn, &self.memory, &self.config, &mut rng)?;
        for (_, p) in self.posterior.iter() {
            stored.add(p.name.clone(), p.group, p.tensor.clone());
        }
        model.params_mut().load_values(&stored)?;
        Ok((model, self.memory, self.sampled))
    }
}

pub fn save_mgm_checkpoint(model: &MgmModel, memory: &MemoryBank, sampled: &MemoryBank, path: &Path) -> Result<()> {
    let json = serde_json::to_string(&MgmCheckpoint::new(model, memory, sampled))?;
    fs::write(path, json).map_err(|e| MgmError::io(path, e))
}

pub fn load_mgm_checkpoint(path: &Path) -> Result<(MgmModel, MemoryBank, MemoryBank)> {
    let text = fs::read_to_string(path).map_err(|e| MgmError::io(path, e))?;
    let ckpt: MgmCheckpoint = serde_json::from_str(&text)?;
    ckpt.into_parts()
}
