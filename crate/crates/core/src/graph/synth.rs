//! Synthetic media-like graphs: disconnected homophilous components, class
//! conditioned features and sparse labels.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{MgmError, Result};
use crate::graph::splits::apportion;
use crate::graph::{Edge, Graph};
use crate::rng::SeedStreams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub n_components: usize,
    pub n_classes: usize,
    /// Probability that an edge joins two nodes of the same class.
    pub homophily: f64,
    /// Share of nodes that carry a label.
    pub label_fraction: f64,
    /// Standard deviation of the Gaussian noise around the class means.
    pub feature_noise: f64,
    pub n_features: usize,
    pub average_degree: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_nodes: 2000,
            n_components: 8,
            n_classes: 3,
            homophily: 0.8,
            label_fraction: 0.02,
            feature_noise: 1.0,
            n_features: 5,
            average_degree: 6.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MgmError::Generation(m));
        if self.n_components == 0 || self.n_classes == 0 {
            return fail("need at least one component and one class".into());
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return fail(format!("homophily {} outside [0, 1]", self.homophily));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return fail(format!("label fraction {} outside (0, 1]", self.label_fraction));
        }
        if !(self.feature_noise >= 0.0) || !(self.average_degree >= 0.0) {
            return fail("noise and degree must be non-negative".into());
        }
        if self.n_features < self.n_classes {
            return fail(format!(
                "{} features cannot hold {} orthogonal class means",
                self.n_features, self.n_classes
            ));
        }
        if self.n_nodes / self.n_components < self.n_classes {
            return fail(format!(
                "{} nodes over {} components leaves some component without every class",
                self.n_nodes, self.n_components
            ));
        }
        let labeled = self.n_labeled();
        if labeled < self.n_classes {
            return fail(format!(
                "{labeled} labeled nodes cannot cover {} classes",
                self.n_classes
            ));
        }
        Ok(())
    }

    pub fn n_labeled(&self) -> usize {
        (self.label_fraction * self.n_nodes as f64 - 1e-9).ceil() as usize
    }
}

/// Builds the graph and returns it with every node's true class.
///
/// Components are contiguous node ranges. Inside a component classes are
/// balanced and shuffled, a random spanning tree guarantees connectivity and
/// extra edges bring the mean degree to `average_degree`. Every edge picks a
/// same-class partner with probability `homophily`. Weights are overlap
/// percentages drawn uniformly from `[1, 100]`.
pub fn synth_graph(cfg: &SynthConfig) -> Result<(Graph, Vec<usize>)> {
    cfg.validate()?;
    let streams = SeedStreams::new(cfg.seed);
    let mut rng = streams.stream("synth-structure");
    let (n, c) = (cfg.n_nodes, cfg.n_classes);

    let comp_sizes = apportion(n, &vec![1.0; cfg.n_components]);
    let mut truth = Vec::with_capacity(n);
    let mut edges = Vec::new();
    let mut start = 0;
    for &size in &comp_sizes {
        let mut classes: Vec<usize> = (0..size).map(|k| k % c).collect();
        classes.shuffle(&mut rng);
        let members: Vec<usize> = (start..start + size).collect();
        let class_of = |v: usize| classes[v - start];
        let partner = |rng: &mut crate::rng::StreamRng, u: usize, pool: &[usize]| -> Option<usize> {
            let same = rng.random_bool(cfg.homophily);
            let candidates: Vec<usize> = pool
                .iter()
                .copied()
                .filter(|&v| v != u && (class_of(v) == class_of(u)) == same)
                .collect();
            let candidates = if candidates.is_empty() {
                pool.iter().copied().filter(|&v| v != u).collect()
            } else {
                candidates
            };
            if candidates.is_empty() {
                None
            } else {
                Some(candidates[rng.random_range(0..candidates.len())])
            }
        };

        let mut order = members.clone();
        order.shuffle(&mut rng);
        for k in 1..order.len() {
            let u = order[k];
            if let Some(v) = partner(&mut rng, u, &order[..k]) {
                edges.push(Edge {
                    src: u,
                    dst: v,
                    weight: rng.random_range(1.0..=100.0),
                });
            }
        }
        let target = (cfg.average_degree * size as f64 / 2.0).round() as usize;
        let extra = target.saturating_sub(size.saturating_sub(1));
        for _ in 0..extra {
            let u = members[rng.random_range(0..size)];
            if let Some(v) = partner(&mut rng, u, &members) {
                edges.push(Edge {
                    src: u,
                    dst: v,
                    weight: rng.random_range(1.0..=100.0),
                });
            }
        }
        truth.extend(classes.iter().copied());
        start += size;
    }

    let mut frng = streams.stream("synth-features");
    let f = cfg.n_features;
    let mut x = Vec::with_capacity(n * f);
    for &y in &truth {
        for j in 0..f {
            let mean = if j == y { 1.0 } else { 0.0 };
            let noise: f64 = StandardNormal.sample(&mut frng);
            x.push(mean + cfg.feature_noise * noise);
        }
    }

    let mut lrng = streams.stream("synth-labels");
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (v, &y) in truth.iter().enumerate() {
        pools[y].push(v);
    }
    let quotas = apportion(
        cfg.n_labeled(),
        &pools.iter().map(|p| p.len() as f64).collect::<Vec<_>>(),
    );
    let mut labels = vec![None; n];
    for (y, (pool, &q)) in pools.iter_mut().zip(&quotas).enumerate() {
        pool.shuffle(&mut lrng);
        for &v in pool.iter().take(q) {
            labels[v] = Some(y);
        }
    }

    let ids = (0..n).map(|i| format!("node{i:05}")).collect();
    let names = (0..c).map(|k| format!("class{k}")).collect();
    let g = Graph::new(ids, Tensor::matrix(n, f, x), edges, labels, names)?;
    Ok((g, truth))
}
