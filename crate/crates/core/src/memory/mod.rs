//! Store of labeled-node embeddings and its sparse, mass-based reduction.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tensor};
use crate::backbones::{Encoder, EncoderInputs};
use crate::error::{MgmError, Result};
use crate::graph::Graph;

/// Slack allowed when comparing a cumulative mass with its threshold.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryMode {
    Full,
    Sampled,
}

/// Embeddings of labeled candidate nodes, detached from any tape.
///
/// Rows follow ascending node index. `positions[r]` is the row's index in
/// the full memory, which is also its index into the Dirichlet parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    pub mode: MemoryMode,
    pub threshold: f64,
    pub nodes: Vec<usize>,
    pub node_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub positions: Vec<usize>,
    pub n_classes: usize,
    pub embeddings: Tensor,
    /// Expected-ω mass kept by the selection (1 for a full memory).
    pub retained_mass: f64,
}

impl MemoryBank {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// `M×C` one-hot label matrix.
    pub fn label_matrix(&self) -> Tensor {
        let mut t = Tensor::zeros(self.len(), self.n_classes);
        for (r, &c) in self.labels.iter().enumerate() {
            t.set(r, c, 1.0);
        }
        t
    }

    /// Row of `node` in this memory, if present.
    pub fn row_of(&self, node: usize) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    /// Recomputes every stored row with the current encoder. Ids, labels and
    /// positions stay as they are.
    pub fn refresh(&mut self, encoder: &Encoder, params: &ParamSet, inputs: &EncoderInputs) -> Result<()> {
        let z = encoder.encode(params, inputs)?;
        self.embeddings = z.select_rows(&self.nodes);
        Ok(())
    }

    /// Writes the memory as a standalone JSON document.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Full memory over the labeled nodes in `train_mask`.
pub fn build_memory(
    encoder: &Encoder,
    params: &ParamSet,
    inputs: &EncoderInputs,
    graph: &Graph,
    train_mask: &[bool],
) -> Result<MemoryBank> {
    let nodes: Vec<usize> = (0..graph.n_nodes())
        .filter(|&i| train_mask[i] && graph.labels()[i].is_some())
        .collect();
    if nodes.is_empty() {
        return Err(MgmError::Precondition(
            "memory needs at least one labeled training node".into(),
        ));
    }
    let z = encoder.encode(params, inputs)?;
    Ok(MemoryBank {
        mode: MemoryMode::Full,
        threshold: 1.0,
        node_ids: nodes.iter().map(|&i| graph.node_ids()[i].clone()).collect(),
        labels: nodes.iter().map(|&i| graph.labels()[i].expect("filtered")).collect(),
        positions: (0..nodes.len()).collect(),
        n_classes: graph.n_classes(),
        embeddings: z.select_rows(&nodes),
        nodes,
        retained_mass: 1.0,
    })
}

/// `E[ω] = λ / Σλ` under `Dir(λ)`.
pub fn expected_omega(lambda: &[f64]) -> Result<Vec<f64>> {
    if lambda.is_empty() || lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(MgmError::Domain("Dirichlet parameters must be finite and positive".into()));
    }
    let total = neumaier_sum(lambda.iter().copied());
    Ok(lambda.iter().map(|l| l / total).collect())
}

/// Compensated summation, so long prefix sums do not drift.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Ranking of memory rows by descending weight, ties by ascending node
/// index, and the length of the shortest prefix whose mass reaches
/// `threshold`.
pub fn top_mass_prefix(nodes: &[usize], omega: &[f64], threshold: f64) -> Result<(Vec<usize>, usize)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MgmError::Config(format!(
            "mass threshold {threshold} outside (0, 1]"
        )));
    }
    if omega.len() != nodes.len() {
        return Err(MgmError::Shape(format!(
            "{} weights for {} memory rows",
            omega.len(),
            nodes.len()
        )));
    }
    let mut order: Vec<usize> = (0..omega.len()).collect();
    order.sort_by(|&a, &b| omega[b].total_cmp(&omega[a]).then(nodes[a].cmp(&nodes[b])));
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let mut keep = order.len();
    for (k, &r) in order.iter().enumerate() {
        let v = omega[r];
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
        if sum + comp >= threshold - MASS_TOLERANCE {
            keep = k + 1;
            break;
        }
    }
    Ok((order, keep))
}

/// Keeps the highest-weight rows covering `threshold` of the expected-ω
/// mass. The result lists its rows in memory order.
pub fn select_candidates(memory: &MemoryBank, omega: &[f64], threshold: f64) -> Result<MemoryBank> {
    let (order, keep) = top_mass_prefix(&memory.nodes, omega, threshold)?;
    let mut rows: Vec<usize> = order[..keep].to_vec();
    rows.sort_unstable();
    let retained = neumaier_sum(rows.iter().map(|&r| omega[r]));
    Ok(MemoryBank {
        mode: MemoryMode::Sampled,
        threshold,
        nodes: rows.iter().map(|&r| memory.nodes[r]).collect(),
        node_ids: rows.iter().map(|&r| memory.node_ids[r].clone()).collect(),
        labels: rows.iter().map(|&r| memory.labels[r]).collect(),
        positions: rows.iter().map(|&r| memory.positions[r]).collect(),
        n_classes: memory.n_classes,
        embeddings: memory.embeddings.select_rows(&rows),
        retained_mass: retained,
    })
}

/// [`select_candidates`] with the mass threshold set to `fraction`; a
/// fraction of 1 returns the memory unchanged.
pub fn select_fraction(memory: &MemoryBank, omega: &[f64], fraction: f64) -> Result<MemoryBank> {
    if fraction == 1.0 {
        if omega.len() != memory.len() {
            return Err(MgmError::Shape(format!(
                "{} weights for {} memory rows",
                omega.len(),
                memory.len()
            )));
        }
        return Ok(memory.clone());
    }
    select_candidates(memory, omega, fraction)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(m: usize) -> MemoryBank {
        MemoryBank {
            mode: MemoryMode::Full,
            threshold: 1.0,
            nodes: (0..m).map(|i| 10 + 2 * i).collect(),
            node_ids: (0..m).map(|i| format!("n{i}")).collect(),
            labels: (0..m).map(|i| i % 3).collect(),
            positions: (0..m).collect(),
            n_classes: 3,
            embeddings: Tensor::matrix(m, 1, (0..m).map(|i| i as f64).collect()),
            retained_mass: 1.0,
        }
    }

    #[test]
    fn prefix_examples() {
        let b = bank(4);
        let s = select_candidates(&b, &[0.5, 0.3, 0.15, 0.05], 0.9).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.positions, vec![0, 1, 2]);
        let b = bank(10);
        let s = select_candidates(&b, &[0.1; 10], 0.9).unwrap();
        assert_eq!(s.len(), 9);
        assert_eq!(s.positions, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn kept_rows_stay_in_memory_order() {
        let b = bank(4);
        let s = select_candidates(&b, &[0.05, 0.15, 0.5, 0.3], 0.9).unwrap();
        assert_eq!(s.positions, vec![1, 2, 3]);
        assert_eq!(s.embeddings.data(), &[1.0, 2.0, 3.0]);
        assert!((s.retained_mass - 0.95).abs() < 1e-15);
    }

    #[test]
    fn threshold_out_of_range() {
        let b = bank(3);
        for t in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(select_candidates(&b, &[0.2, 0.3, 0.5], t), Err(MgmError::Config(_))));
        }
    }

    #[test]
    fn expected_omega_normalizes() {
        assert_eq!(expected_omega(&[1.0, 1.0, 2.0]).unwrap(), vec![0.25, 0.25, 0.5]);
        assert!(expected_omega(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn full_fraction_is_identity() {
        let b = bank(5);
        assert_eq!(select_fraction(&b, &[0.2; 5], 1.0).unwrap(), b);
    }
}
