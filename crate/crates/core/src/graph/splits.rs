use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MgmError, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(MgmError::Config(format!(
                "split ratios {parts:?} must be in [0,1] and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Disjoint node masks. Labeled training nodes dropped by the label-fraction
/// knob are flagged in `unused`, so the four masks together cover the labeled
/// set exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
    pub unused: Vec<bool>,
}

fn indices(mask: &[bool]) -> Vec<usize> {
    (0..mask.len()).filter(|&i| mask[i]).collect()
}

impl SplitMasks {
    pub fn train_indices(&self) -> Vec<usize> {
        indices(&self.train)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        indices(&self.val)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        indices(&self.test)
    }

    /// Nodes outside train and validation: the ones a model must predict.
    pub fn held_out(&self) -> Vec<bool> {
        self.train
            .iter()
            .zip(&self.val)
            .map(|(t, v)| !t && !v)
            .collect()
    }
}

/// Largest-remainder apportionment of `total` proportionally to `weights`;
/// ties go to the earlier entry.
pub(crate) fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let assigned: usize = out.iter().sum();
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        out[k] += 1;
    }
    out
}

/// Integer table with the given row and column sums, close to the
/// proportional fractional table.
fn controlled_rounding(rows: &[usize], cols: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = rows.iter().sum();
    let mut cells = vec![vec![0usize; cols.len()]; rows.len()];
    let mut frac = Vec::new();
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            let exact = r as f64 * c as f64 / total.max(1) as f64;
            cells[i][j] = exact.floor() as usize;
            frac.push((exact - exact.floor(), i, j));
        }
    }
    let mut row_left: Vec<usize> = rows.iter().zip(&cells).map(|(r, c)| r - c.iter().sum::<usize>()).collect();
    let mut col_left: Vec<usize> = (0..cols.len())
        .map(|j| cols[j] - cells.iter().map(|row| row[j]).sum::<usize>())
        .collect();
    frac.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut first = true;
    while row_left.iter().any(|&r| r > 0) {
        for &(f, i, j) in &frac {
            if (first && f == 0.0) || row_left[i] == 0 || col_left[j] == 0 {
                continue;
            }
            cells[i][j] += 1;
            row_left[i] -= 1;
            col_left[j] -= 1;
        }
        first = false;
    }
    cells
}

/// Stratified random split of the labeled nodes, then a stratified
/// subsample of the training part down to `round(label_fraction · n_train)`
/// nodes (at least one). Classes with fewer than three labeled nodes go to
/// training whole.
pub fn make_splits(g: &Graph, ratios: SplitRatios, label_fraction: f64, seed: u64) -> Result<SplitMasks> {
    ratios.validate()?;
    if !(label_fraction > 0.0 && label_fraction <= 1.0) {
        return Err(MgmError::Config(format!(
            "label fraction {label_fraction} must lie in (0, 1]"
        )));
    }
    let n = g.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); g.n_classes()];
    for (i, l) in g.labels().iter().enumerate() {
        if let Some(c) = l {
            by_class[*c].push(i);
        }
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }

    let mut train_by_class: Vec<Vec<usize>> = vec![Vec::new(); g.n_classes()];
    let mut masks = SplitMasks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
        unused: vec![false; n],
    };
    let split_classes: Vec<usize> = (0..g.n_classes())
        .filter(|&c| {
            let small = !by_class[c].is_empty() && by_class[c].len() < 3;
            if small {
                log::warn!(
                    "class '{}' has only {} labeled nodes; all of them are used for training",
                    g.label_names()[c],
                    by_class[c].len()
                );
                train_by_class[c] = by_class[c].clone();
            }
            by_class[c].len() >= 3
        })
        .collect();
    let sizes: Vec<usize> = split_classes.iter().map(|&c| by_class[c].len()).collect();
    let totals = apportion(sizes.iter().sum(), &[ratios.train, ratios.val, ratios.test]);
    let table = controlled_rounding(&sizes, &totals);
    for (row, &c) in table.iter().zip(&split_classes) {
        let members = &by_class[c];
        train_by_class[c] = members[..row[0]].to_vec();
        for &i in &members[row[0]..row[0] + row[1]] {
            masks.val[i] = true;
        }
        for &i in &members[row[0] + row[1]..] {
            masks.test[i] = true;
        }
    }

    let n_train: usize = train_by_class.iter().map(Vec::len).sum();
    let keep_total = if n_train == 0 {
        0
    } else {
        ((label_fraction * n_train as f64).round() as usize).max(1)
    };
    let class_sizes: Vec<f64> = train_by_class.iter().map(|v| v.len() as f64).collect();
    let quotas = apportion(keep_total, &class_sizes);
    for (members, &q) in train_by_class.iter().zip(&quotas) {
        for (k, &i) in members.iter().enumerate() {
            if k < q {
                masks.train[i] = true;
            } else {
                masks.unused[i] = true;
            }
        }
    }
    Ok(masks)
}
