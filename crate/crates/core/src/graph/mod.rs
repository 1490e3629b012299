//! Graph data model, ingestion, splits, normalization, synthesis and metrics.

mod adjacency;
mod io;
mod metrics;
mod splits;
mod synth;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{MgmError, Result};

pub use adjacency::{mean_adjacency, normalize_adjacency};
pub use io::{load_graph, save_graph};
pub use metrics::{compute_metrics, ClassMetrics, MetricsReport};
pub use splits::{make_splits, SplitMasks, SplitRatios};
pub(crate) use splits::apportion;
pub use synth::{synth_graph, SynthConfig};

/// Undirected weighted edge with `src < dst`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// Partially labeled attributed graph.
///
/// Features are kept as loaded; [`Graph::standardized_features`] produces the
/// z-scored matrix that models consume.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_ids: Vec<String>,
    features: Tensor,
    edges: Vec<Edge>,
    labels: Vec<Option<usize>>,
    label_names: Vec<String>,
}

impl Graph {
    /// Validates and canonicalizes the parts. Edges may come in either
    /// direction and repeat; duplicates keep the largest weight. Self-edges
    /// are dropped because normalization adds its own self-loops.
    pub fn new(
        node_ids: Vec<String>,
        features: Tensor,
        edges: Vec<Edge>,
        labels: Vec<Option<usize>>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        let n = node_ids.len();
        if n == 0 {
            return Err(MgmError::Precondition("graph has no nodes".into()));
        }
        if features.rows() != n || features.cols() == 0 {
            return Err(MgmError::Shape(format!(
                "features {:?} for {n} nodes",
                features.shape()
            )));
        }
        if labels.len() != n {
            return Err(MgmError::Shape(format!("{} labels for {n} nodes", labels.len())));
        }
        if label_names.is_empty() {
            return Err(MgmError::Precondition("no label names".into()));
        }
        if let Some((i, c)) = labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.filter(|&c| c >= label_names.len()).map(|c| (i, c)))
        {
            return Err(MgmError::Precondition(format!(
                "node {i} has label {c} but only {} classes exist",
                label_names.len()
            )));
        }
        let mut canonical: Vec<Edge> = Vec::with_capacity(edges.len());
        for e in edges {
            if e.src >= n || e.dst >= n {
                return Err(MgmError::Precondition(format!(
                    "edge ({}, {}) outside {n} nodes",
                    e.src, e.dst
                )));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(MgmError::Precondition(format!(
                    "edge ({}, {}) has weight {}",
                    e.src, e.dst, e.weight
                )));
            }
            if e.src == e.dst {
                continue;
            }
            canonical.push(Edge {
                src: e.src.min(e.dst),
                dst: e.src.max(e.dst),
                weight: e.weight,
            });
        }
        canonical.sort_by(|a, b| {
            (a.src, a.dst)
                .cmp(&(b.src, b.dst))
                .then(b.weight.total_cmp(&a.weight))
        });
        canonical.dedup_by(|later, first| later.src == first.src && later.dst == first.dst);
        Ok(Graph {
            node_ids,
            features,
            edges: canonical,
            labels,
            label_names,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn labeled(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.labels[i].is_some()).collect()
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.node_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Per-feature z-scores over all nodes (population variance). Constant
    /// features are only centered.
    pub fn standardized_features(&self) -> Tensor {
        let (n, f) = (self.n_nodes(), self.n_features());
        let x = &self.features;
        let mut out = x.clone();
        for j in 0..f {
            let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..n {
                out.set(i, j, (x.get(i, j) - mean) / sd);
            }
        }
        out
    }

    /// Component id per node, numbered in order of first appearance.
    pub fn components(&self) -> Vec<usize> {
        let n = self.n_nodes();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.src), find(&mut parent, e.dst));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut ids = HashMap::new();
        (0..n)
            .map(|i| {
                let root = find(&mut parent, i);
                let next = ids.len();
                *ids.entry(root).or_insert(next)
            })
            .collect()
    }

    pub fn n_components(&self) -> usize {
        self.components().into_iter().max().map_or(0, |m| m + 1)
    }
}
