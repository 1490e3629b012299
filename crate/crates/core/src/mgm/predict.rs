use crate::autodiff::kernels::{matmul_bt, normalize_rows};
use crate::autodiff::Tensor;
use crate::backbones::{argmax_rows, classify_local, EncoderInputs};
use crate::error::{MgmError, Result};
use crate::memory::MemoryBank;
use crate::par;

use super::distributions::classify_global;
use super::model::MgmModel;

/// Categorical prior over memory rows for each query:
/// `softmax(cos(h, ẑ) / τ + ln ω)`.
///
/// A query whose own node is in the memory never selects itself. When no
/// candidate is left the row falls back to uniform over the memory.
pub fn similar_node_prior(
    queries: &Tensor,
    query_nodes: &[usize],
    memory: &MemoryBank,
    omega: &[f64],
    tau: f64,
) -> Result<Tensor> {
    if memory.is_empty() {
        return Err(MgmError::Prediction("memory is empty".into()));
    }
    if queries.cols() != memory.dim() || query_nodes.len() != queries.rows() || omega.len() != memory.len() {
        return Err(MgmError::Shape(format!(
            "queries {:?} ({} ids), memory {}x{}, {} weights",
            queries.shape(),
            query_nodes.len(),
            memory.len(),
            memory.dim(),
            omega.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(MgmError::Config(format!("temperature {tau} must be positive")));
    }
    let m = memory.len();
    let cos = matmul_bt(&normalize_rows(queries).0, &normalize_rows(&memory.embeddings).0);
    let ln_omega: Vec<f64> = omega.iter().map(|w| w.ln()).collect();
    let cd = cos.data();
    let mut out = vec![0.0; queries.rows() * m];
    par::for_each_row(&mut out, m, |i, row| {
        let own = memory.row_of(query_nodes[i]);
        let mut max = f64::NEG_INFINITY;
        for (r, v) in row.iter_mut().enumerate() {
            *v = if Some(r) == own || ln_omega[r] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                cd[i * m + r] / tau + ln_omega[r]
            };
            max = max.max(*v);
        }
        if max == f64::NEG_INFINITY {
            row.iter_mut().for_each(|v| *v = 1.0 / m as f64);
            return;
        }
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    });
    let fallback = (0..queries.rows())
        .filter(|&i| {
            let own = memory.row_of(query_nodes[i]);
            (0..m).all(|r| Some(r) == own || omega[r] == 0.0)
        })
        .count();
    if fallback > 0 {
        log::warn!("{fallback} queries have no candidate besides themselves; using a uniform prior");
    }
    Ok(Tensor::matrix(queries.rows(), m, out))
}

/// Indices of the `k` largest entries (fewer if fewer are positive), ties
/// by ascending index.
pub fn top_k_rows(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).filter(|&r| probs[r] > 0.0).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Local, global and fused class probabilities for a set of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub nodes: Vec<usize>,
    pub local: Tensor,
    pub global: Tensor,
    pub fused: Tensor,
    pub labels: Vec<usize>,
}

/// Predicts `nodes` against `memory` (full or sampled).
///
/// The global vote takes the `K` most probable candidates under the prior
/// with `ω = E[ω]`. With `η = 1` the memory is not consulted and the fused
/// output is the local classifier.
pub fn predict(model: &MgmModel, memory: &MemoryBank, inputs: &EncoderInputs, nodes: &[usize]) -> Result<Prediction> {
    if memory.is_empty() {
        return Err(MgmError::Prediction("memory is empty".into()));
    }
    if let Some(&bad) = nodes.iter().find(|&&n| n >= inputs.n_nodes()) {
        return Err(MgmError::Prediction(format!("node {bad} is outside the graph")));
    }
    let params = model.params();
    let c = model.gnn.n_classes();
    let h = model.gnn.encoder.encode(params, inputs)?.select_rows(nodes);
    let local = classify_local(
        &h,
        params.tensor(model.gnn.head.weight),
        params.tensor(model.gnn.head.bias),
    )?;
    let eta = model.config.eta;
    if eta == 1.0 {
        return Ok(Prediction {
            nodes: nodes.to_vec(),
            labels: argmax_rows(&local),
            global: Tensor::zeros(nodes.len(), c),
            fused: local.clone(),
            local,
        });
    }
    let full = model.expected_omega()?;
    let omega: Vec<f64> = memory.positions.iter().map(|&p| full[p]).collect();
    let prior = similar_node_prior(&h, nodes, memory, &omega, model.config.tau)?;
    let jobs: Vec<usize> = (0..nodes.len()).collect();
    let k = model.config.k;
    let rows: Vec<Result<Vec<f64>>> = par::map_jobs(&jobs, |&i| {
        let chosen = top_k_rows(prior.row(i), k);
        let mut counts = vec![0usize; memory.len()];
        chosen.iter().for_each(|&r| counts[r] = 1);
        classify_global(&counts, &memory.labels, c)
    });
    let mut global = Vec::with_capacity(nodes.len() * c);
    for r in rows {
        global.extend(r?);
    }
    let global = Tensor::matrix(nodes.len(), c, global);
    let fused = Tensor::matrix(
        nodes.len(),
        c,
        local
            .data()
            .iter()
            .zip(global.data())
            .map(|(l, g)| eta * l + (1.0 - eta) * g)
            .collect(),
    );
    Ok(Prediction {
        nodes: nodes.to_vec(),
        labels: argmax_rows(&fused),
        local,
        global,
        fused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k_rows(&[0.2, 0.4, 0.4, 0.0], 2), vec![1, 2]);
        assert_eq!(top_k_rows(&[0.5, 0.0, 0.5], 3), vec![0, 2]);
    }
}
