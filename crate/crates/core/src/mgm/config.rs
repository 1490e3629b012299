use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MgmError, Result};
use crate::memory::MemoryMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MgmConfig {
    /// Number of global similar nodes per query.
    pub k: usize,
    /// Weight of the local classifier in the fused prediction.
    pub eta: f64,
    /// Dirichlet concentration shared by every candidate.
    pub alpha: f64,
    /// Per-candidate concentrations keyed by node id; others use `alpha`.
    pub alpha_overrides: BTreeMap<String, f64>,
    /// Initial prior variance of the embeddings (learned afterwards).
    pub sigma1_init: f64,
    pub mc_samples: usize,
    pub max_iterations: usize,
    pub patience: usize,
    /// Temperature of the cosine similarity.
    pub tau: f64,
    /// Adam steps per E-step and per M-step.
    pub inner_steps: usize,
    pub learning_rate: f64,
    pub memory_mode: MemoryMode,
    /// Expected-ω mass kept by the sampled memory.
    pub mass: f64,
}

impl Default for MgmConfig {
    fn default() -> Self {
        MgmConfig {
            k: 3,
            eta: 0.8,
            alpha: 0.1,
            alpha_overrides: BTreeMap::new(),
            sigma1_init: 1.0,
            mc_samples: 1,
            max_iterations: 50,
            patience: 10,
            tau: 1.0,
            inner_steps: 5,
            learning_rate: 1e-3,
            memory_mode: MemoryMode::Sampled,
            mass: 0.9,
        }
    }
}

impl MgmConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MgmError::Config(m));
        if self.k == 0 {
            return fail("K must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return fail(format!("eta {} outside [0, 1]", self.eta));
        }
        if !(self.alpha > 0.0) || self.alpha_overrides.values().any(|a| !(*a > 0.0)) {
            return fail("Dirichlet concentrations must be positive".into());
        }
        if !(self.sigma1_init > 0.0) || !(self.tau > 0.0) || !(self.learning_rate > 0.0) {
            return fail("sigma1_init, tau and learning_rate must be positive".into());
        }
        if self.mc_samples == 0 || self.inner_steps == 0 {
            return fail("mc_samples and inner_steps must be at least 1".into());
        }
        if !(self.mass > 0.0 && self.mass <= 1.0) {
            return fail(format!("mass {} outside (0, 1]", self.mass));
        }
        Ok(())
    }

    /// True when the memory branch has no influence (η = 1).
    pub fn is_vanilla(&self) -> bool {
        self.eta == 1.0
    }
}
