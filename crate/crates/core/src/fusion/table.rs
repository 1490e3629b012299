use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{MgmError, Result};

/// Tolerance on the sum of a stored probability vector.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Per-media class probabilities from one model. Absent ids have no
/// prediction; an all-zero vector is a legal placeholder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTable {
    pub source: String,
    /// Class names in vector order; empty when the file did not say.
    pub labels: Vec<String>,
    pub n_classes: usize,
    pub entries: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    #[serde(default)]
    source: String,
    #[serde(default)]
    labels: Vec<String>,
}

fn check_vector(id: &str, v: &[f64], n_classes: usize) -> Result<()> {
    if v.len() != n_classes {
        return Err(MgmError::Ingestion(format!(
            "{id}: expected {n_classes} probabilities, got {}",
            v.len()
        )));
    }
    if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(MgmError::Ingestion(format!("{id}: probabilities must be finite and non-negative")));
    }
    let sum: f64 = v.iter().sum();
    if sum != 0.0 && (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(MgmError::Ingestion(format!("{id}: probabilities sum to {sum}")));
    }
    Ok(())
}

impl ProbabilityTable {
    pub fn new(source: impl Into<String>, n_classes: usize) -> Self {
        ProbabilityTable {
            source: source.into(),
            labels: Vec::new(),
            n_classes,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f64>) -> Result<()> {
        let id = id.into();
        check_vector(&id, &v, self.n_classes)?;
        self.entries.insert(id, v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `{"metadata": {...}, "probabilities": {id: [..]}}`, or a bare
    /// `{id: [..]}` object with an optional `metadata` key. Blank input is an
    /// empty table.
    pub fn from_json(text: &str, n_classes: usize) -> Result<Self> {
        let mut table = ProbabilityTable::new("", n_classes);
        if text.trim().is_empty() {
            return Ok(table);
        }
        let Value::Object(mut root) = serde_json::from_str(text)? else {
            return Err(MgmError::Ingestion("probability file must hold a JSON object".into()));
        };
        if let Some(meta) = root.remove("metadata") {
            let meta: Metadata = serde_json::from_value(meta)?;
            if !meta.labels.is_empty() && meta.labels.len() != n_classes {
                return Err(MgmError::Ingestion(format!(
                    "metadata names {} labels, expected {n_classes}",
                    meta.labels.len()
                )));
            }
            table.source = meta.source;
            table.labels = meta.labels;
        }
        let entries = match root.remove("probabilities") {
            Some(Value::Object(map)) => map,
            Some(_) => return Err(MgmError::Ingestion("`probabilities` must be an object".into())),
            None => root,
        };
        for (id, v) in entries {
            let parsed: Vec<f64> = serde_json::from_value(v)
                .map_err(|e| MgmError::Ingestion(format!("{id}: {e}")))?;
            table.insert(id, parsed)?;
        }
        Ok(table)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = serde_json::json!({
            "metadata": Metadata { source: self.source.clone(), labels: self.labels.clone() },
            "probabilities": self.entries,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

pub fn load_probabilities(path: &Path, n_classes: usize) -> Result<ProbabilityTable> {
    let text = fs::read_to_string(path).map_err(|e| MgmError::io(path, e))?;
    ProbabilityTable::from_json(&text, n_classes)
}

pub fn save_probabilities(table: &ProbabilityTable, path: &Path) -> Result<()> {
    fs::write(path, table.to_json()?).map_err(|e| MgmError::io(path, e))
}

/// Where an imputed vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Text,
    Graph,
    Zero,
}

pub enum Fallback<'a> {
    Zeros,
    Table(&'a ProbabilityTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Imputed {
    pub table: ProbabilityTable,
    pub provenance: BTreeMap<String, Provenance>,
}

/// Completes `table` over `universe`: present vectors are kept, missing ones
/// come from the fallback.
pub fn impute_missing(table: &ProbabilityTable, fallback: Fallback<'_>, universe: &[String]) -> Result<Imputed> {
    let mut out = ProbabilityTable {
        entries: BTreeMap::new(),
        ..table.clone()
    };
    let mut provenance = BTreeMap::new();
    for id in universe {
        let (v, from) = match (table.get(id), &fallback) {
            (Some(v), _) => (v.to_vec(), Provenance::Text),
            (None, Fallback::Zeros) => (vec![0.0; table.n_classes], Provenance::Zero),
            (None, Fallback::Table(g)) => {
                if g.n_classes != table.n_classes {
                    return Err(MgmError::Pipeline(format!(
                        "fallback has {} classes, table has {}",
                        g.n_classes, table.n_classes
                    )));
                }
                let v = g.get(id).ok_or_else(|| {
                    MgmError::Pipeline(format!("fallback table `{}` has no entry for {id}", g.source))
                })?;
                (v.to_vec(), Provenance::Graph)
            }
        };
        out.entries.insert(id.clone(), v);
        provenance.insert(id.clone(), from);
    }
    Ok(Imputed { table: out, provenance })
}

/// `softmax([p_text ‖ p_graph] W + b)` with `W` of shape `2C×C`.
pub fn fuse_text_graph(p_text: &[f64], p_graph: &[f64], w: &crate::autodiff::Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let c = p_text.len();
    if p_graph.len() != c || w.rows() != 2 * c || w.cols() != c || b.len() != c {
        return Err(MgmError::Shape(format!(
            "fusion of {c}+{} probabilities with W {:?} and {} biases",
            p_graph.len(),
            w.shape(),
            b.len()
        )));
    }
    let x: Vec<f64> = p_text.iter().chain(p_graph).copied().collect();
    let logits: Vec<f64> = (0..c)
        .map(|j| b[j] + x.iter().enumerate().map(|(i, v)| v * w.get(i, j)).sum::<f64>())
        .collect();
    Ok(softmax(&logits))
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
