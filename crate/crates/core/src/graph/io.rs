//! Tab-separated graph files.
//!
//! * nodes: `node_id<TAB>f1<TAB>...<TAB>fF`
//! * edges: `src_id<TAB>dst_id<TAB>weight`
//! * labels: `node_id<TAB>label_name`
//!
//! Each file may start with a header line; it is recognized by fields that do
//! not parse as data. Blank lines are skipped.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{MgmError, Result};
use crate::graph::{Edge, Graph};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| MgmError::io(path, e))
}

fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').split('\t').collect()))
}

fn ingest(file: &str, line: usize, msg: impl std::fmt::Display) -> MgmError {
    MgmError::Ingestion(format!("{file} line {line}: {msg}"))
}

/// Loads a graph; `label_names` fixes the class order.
pub fn load_graph(
    nodes_path: &Path,
    edges_path: &Path,
    labels_path: &Path,
    label_names: &[String],
) -> Result<Graph> {
    if label_names.is_empty() {
        return Err(MgmError::Config("label map is empty".into()));
    }
    let nodes_text = read(nodes_path)?;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut width = None;
    for (k, (line, fields)) in rows(&nodes_text).enumerate() {
        if fields.len() < 2 {
            return Err(ingest("nodes", line, "expected an id and at least one feature"));
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            fields[1..].iter().map(|f| f.trim().parse::<f64>()).collect();
        let feats = match parsed {
            Ok(v) => v,
            Err(_) if k == 0 => continue,
            Err(e) => return Err(ingest("nodes", line, e)),
        };
        if let Some(bad) = feats.iter().find(|v| !v.is_finite()) {
            return Err(ingest("nodes", line, format!("non-finite feature {bad}")));
        }
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(ingest(
                    "nodes",
                    line,
                    format!("{} features, earlier rows have {w}", feats.len()),
                ))
            }
            _ => {}
        }
        ids.push(fields[0].to_string());
        values.extend(feats);
    }
    let Some(width) = width else {
        return Err(MgmError::Ingestion(format!(
            "{} contains no nodes",
            nodes_path.display()
        )));
    };
    let mut index: HashMap<String, usize> = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(MgmError::Ingestion(format!("duplicate node id '{id}'")));
        }
    }

    let edges_text = read(edges_path)?;
    let mut edges = Vec::new();
    for (k, (line, fields)) in rows(&edges_text).enumerate() {
        if fields.len() != 3 {
            return Err(ingest("edges", line, "expected src, dst and weight"));
        }
        let weight = match fields[2].trim().parse::<f64>() {
            Ok(w) => w,
            Err(_) if k == 0 => continue,
            Err(e) => return Err(ingest("edges", line, e)),
        };
        if !weight.is_finite() || weight < 0.0 {
            return Err(ingest("edges", line, format!("weight {weight} is not a finite non-negative number")));
        }
        let endpoint = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| ingest("edges", line, format!("unknown node '{s}'")))
        };
        edges.push(Edge {
            src: endpoint(fields[0])?,
            dst: endpoint(fields[1])?,
            weight,
        });
    }

    let labels_text = read(labels_path)?;
    let classes: HashMap<&str, usize> = label_names
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut labels = vec![None; ids.len()];
    for (k, (line, fields)) in rows(&labels_text).enumerate() {
        if fields.len() != 2 {
            return Err(ingest("labels", line, "expected node id and label"));
        }
        let (id, name) = (fields[0], fields[1].trim());
        let node = index.get(id).copied();
        let class = classes.get(name).copied();
        if k == 0 && node.is_none() && class.is_none() {
            continue;
        }
        let node = node.ok_or_else(|| ingest("labels", line, format!("unknown node '{id}'")))?;
        let class = class.ok_or_else(|| ingest("labels", line, format!("unknown label '{name}'")))?;
        match labels[node] {
            Some(prev) if prev != class => {
                return Err(ingest("labels", line, format!("conflicting label for '{id}'")))
            }
            _ => labels[node] = Some(class),
        }
    }

    let n = ids.len();
    Graph::new(
        ids,
        Tensor::matrix(n, width, values),
        edges,
        labels,
        label_names.to_vec(),
    )
}

fn write(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| MgmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| MgmError::io(path, e))
}

/// Writes the three files read by [`load_graph`]. Numbers use the shortest
/// representation that parses back to the same bits.
pub fn save_graph(g: &Graph, nodes_path: &Path, edges_path: &Path, labels_path: &Path) -> Result<()> {
    write(nodes_path, |w| {
        write!(w, "node_id")?;
        for j in 0..g.n_features() {
            write!(w, "\tf{}", j + 1)?;
        }
        writeln!(w)?;
        for (i, id) in g.node_ids().iter().enumerate() {
            write!(w, "{id}")?;
            for v in g.features().row(i) {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    write(edges_path, |w| {
        writeln!(w, "src_id\tdst_id\tweight")?;
        for e in g.edges() {
            writeln!(w, "{}\t{}\t{}", g.node_ids()[e.src], g.node_ids()[e.dst], e.weight)?;
        }
        Ok(())
    })?;
    write(labels_path, |w| {
        writeln!(w, "node_id\tlabel")?;
        for (i, l) in g.labels().iter().enumerate() {
            if let Some(c) = l {
                writeln!(w, "{}\t{}", g.node_ids()[i], g.label_names()[*c])?;
            }
        }
        Ok(())
    })
}
