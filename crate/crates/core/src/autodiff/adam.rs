//! Adam with bias correction.

use crate::autodiff::params::{ParamGroup, ParamSet};
use crate::error::{MgmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Option<Vec<f64>>>,
    second: Vec<Option<Vec<f64>>>,
    step: u64,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(1e-3)
    }
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> Option<&[f64]> {
        self.first.get(index).and_then(|m| m.as_deref())
    }

    pub fn second_moment(&self, index: usize) -> Option<&[f64]> {
        self.second.get(index).and_then(|m| m.as_deref())
    }

    /// One update of every parameter in `groups` from its gradient slot.
    ///
    /// All gradients are validated before any parameter moves, so a failed
    /// step leaves the parameters untouched.
    pub fn step(&mut self, params: &mut ParamSet, groups: &[ParamGroup]) -> Result<()> {
        for (_, p) in params.iter().filter(|(_, p)| groups.contains(&p.group)) {
            let Some(g) = p.tensor.grad() else {
                return Err(MgmError::Training(format!(
                    "parameter {} has no gradient",
                    p.name
                )));
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(MgmError::Training(format!(
                    "non-finite gradient for parameter {}",
                    p.name
                )));
            }
        }
        if self.first.len() < params.len() {
            self.first.resize(params.len(), None);
            self.second.resize(params.len(), None);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, p) in params.iter_mut() {
            if !groups.contains(&p.group) {
                continue;
            }
            let n = p.tensor.len();
            let g = p.tensor.grad().expect("validated above").to_vec();
            let m = self.first[id.0].get_or_insert_with(|| vec![0.0; n]);
            let v = self.second[id.0].get_or_insert_with(|| vec![0.0; n]);
            let values = p.tensor.data_mut();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
