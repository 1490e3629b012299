use serde::{Deserialize, Serialize};

use crate::autodiff::tensor::Tensor;
use crate::error::{MgmError, Result};

/// Which side of the variational EM split a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Generative-model parameters θ (encoder, head, prior variance).
    Model,
    /// Variational parameters φ and λ.
    Variational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

/// Ordered, named parameter store.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, tensor: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.clear_grad();
        }
    }

    /// Replaces values from `other`, which must have identical names and shapes.
    pub fn load_values(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(MgmError::Shape(format!(
                "parameter count {} vs {}",
                other.len(),
                self.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.tensor.shape() != src.tensor.shape() {
                return Err(MgmError::Shape(format!(
                    "parameter {} {:?} vs {} {:?}",
                    dst.name,
                    dst.tensor.shape(),
                    src.name,
                    src.tensor.shape()
                )));
            }
            dst.tensor = src.tensor.clone();
        }
        Ok(())
    }
}
