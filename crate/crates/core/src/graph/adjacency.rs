use crate::autodiff::SparseMatrix;
use crate::graph::Graph;

fn weighted_triplets(g: &Graph, weighted: bool) -> Vec<(usize, usize, f64)> {
    let mut t = Vec::with_capacity(2 * g.edges().len());
    for e in g.edges() {
        let w = if weighted { e.weight } else { 1.0 };
        t.push((e.src, e.dst, w));
        t.push((e.dst, e.src, w));
    }
    t
}

/// `D^-1/2 (A + I) D^-1/2`. With `weighted` false every edge counts 1.
/// Nodes left with zero degree get a unit self-loop either way.
pub fn normalize_adjacency(g: &Graph, add_self_loops: bool, weighted: bool) -> SparseMatrix {
    let n = g.n_nodes();
    let mut t = weighted_triplets(g, weighted);
    let mut degree = vec![0.0; n];
    for &(i, _, w) in &t {
        degree[i] += w;
    }
    for (i, d) in degree.iter_mut().enumerate() {
        if add_self_loops || *d == 0.0 {
            t.push((i, i, 1.0));
            *d += 1.0;
        }
    }
    let scaled: Vec<(usize, usize, f64)> = t
        .into_iter()
        .map(|(i, j, w)| (i, j, w / (degree[i] * degree[j]).sqrt()))
        .collect();
    SparseMatrix::from_triplets(n, n, &scaled).expect("indices come from a validated graph")
}

/// Row-stochastic neighbor averaging without self-loops; isolated nodes get
/// an empty row.
pub fn mean_adjacency(g: &Graph, weighted: bool) -> SparseMatrix {
    let n = g.n_nodes();
    let t = weighted_triplets(g, weighted);
    let mut degree = vec![0.0; n];
    for &(i, _, w) in &t {
        degree[i] += w;
    }
    let scaled: Vec<(usize, usize, f64)> = t
        .into_iter()
        .filter(|&(i, _, _)| degree[i] > 0.0)
        .map(|(i, j, w)| (i, j, w / degree[i]))
        .collect();
    SparseMatrix::from_triplets(n, n, &scaled).expect("indices come from a validated graph")
}
