use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{MgmError, Result};
use crate::graph::{load_graph, synth_graph, Graph, SplitMasks, SynthConfig};

use super::config::RunConfig;

/// A graph plus, for synthetic data, the true class of every node.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub truth: Option<Vec<usize>>,
}

pub fn load_dataset(cfg: &RunConfig, seed: u64) -> Result<Dataset> {
    match &cfg.graph {
        Some(files) => Ok(Dataset {
            graph: load_graph(&files.nodes, &files.edges, &files.labels, &files.label_names)?,
            truth: None,
        }),
        None => {
            let synth = SynthConfig { seed, ..cfg.synth.clone() };
            let (graph, truth) = synth_graph(&synth)?;
            Ok(Dataset {
                graph,
                truth: Some(truth),
            })
        }
    }
}

impl Dataset {
    /// Nodes scored after training with their gold classes. Synthetic runs
    /// score every node outside train and validation against the generator's
    /// truth; file runs score the labeled test split.
    pub fn evaluation_targets(&self, masks: &SplitMasks) -> (Vec<usize>, Vec<usize>) {
        match &self.truth {
            Some(truth) => {
                let nodes: Vec<usize> = masks
                    .held_out()
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &h)| h.then_some(i))
                    .collect();
                let gold = nodes.iter().map(|&i| truth[i]).collect();
                (nodes, gold)
            }
            None => {
                let nodes = masks.test_indices();
                let gold = nodes
                    .iter()
                    .map(|&i| self.graph.labels()[i].expect("test nodes are labeled"))
                    .collect();
                (nodes, gold)
            }
        }
    }
}

/// Reads `id<TAB>label_name` rows; a leading line whose label is unknown is
/// taken for a header.
pub fn read_label_map(path: &Path, label_names: &[String]) -> Result<BTreeMap<String, usize>> {
    let text = fs::read_to_string(path).map_err(|e| MgmError::io(path, e))?;
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if fields.len() < 2 {
            return Err(MgmError::Ingestion(format!("{} line {}: expected id and label", path.display(), k + 1)));
        }
        let name = fields[1].trim();
        match label_names.iter().position(|l| l == name) {
            Some(c) => {
                if out.insert(fields[0].trim().to_string(), c).is_some() {
                    return Err(MgmError::Ingestion(format!("{} line {}: duplicate id {}", path.display(), k + 1, fields[0])));
                }
            }
            None if out.is_empty() && k == 0 => continue,
            None => {
                return Err(MgmError::Ingestion(format!("{} line {}: unknown label '{name}'", path.display(), k + 1)));
            }
        }
    }
    Ok(out)
}

/// `node_id  label  p_<class>...` with a header row.
pub fn predictions_tsv(ids: &[&str], probs: &Tensor, labels: &[usize], label_names: &[String]) -> String {
    let mut s = String::from("node_id\tlabel");
    for name in label_names {
        s.push_str("\tp_");
        s.push_str(name);
    }
    s.push('\n');
    for (r, id) in ids.iter().enumerate() {
        s.push_str(id);
        s.push('\t');
        s.push_str(&label_names[labels[r]]);
        for v in probs.row(r) {
            s.push('\t');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    s
}

/// Predicted labels from a predictions TSV, keyed by node id.
pub fn read_predictions(path: &Path, label_names: &[String]) -> Result<BTreeMap<String, usize>> {
    read_label_map(path, label_names)
}
