//! Command bodies. Each validates its config, echoes it to `out/config.json`
//! and writes its artifacts under `out`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbones::EncoderInputs;
use crate::error::{MgmError, Result};
use crate::fusion::{
    fusion_fixture, load_probabilities, run_stage, save_probabilities, split_media, FixtureConfig, ProbabilityTable,
    StageInputs, StageReport,
};
use crate::graph::{compute_metrics, save_graph, MetricsReport, SynthConfig};
use crate::graph::synth_graph;
use crate::memory::MemoryMode;
use crate::mgm::{load_mgm_checkpoint, predict, save_mgm_checkpoint};
use crate::par;

use super::config::RunConfig;
use super::data::{load_dataset, predictions_tsv, read_label_map, read_predictions};
use super::runs::{eta_grid, memory_fraction_seed, paired_run, sweep_seed, Aggregate, MassRow, MeanStd, PairedRun, RunTiming, SweepRow};

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| MgmError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| MgmError::io(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| MgmError::Pipeline(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| MgmError::Pipeline(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| MgmError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| MgmError::io(path, e))
}

fn begin(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("config.json"), cfg)
}

/// Runs one job per seed and stops at the first failure, tagged with its seed.
fn per_seed<R: Send>(cfg: &RunConfig, job: impl Fn(u64) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    par::map_jobs(&cfg.seeds, |&s| job(s).map_err(|e| e.context(format!("seed {s}"))))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub task: String,
    pub encoder: String,
    pub runs: Vec<PairedRun>,
    pub vanilla: Aggregate,
    pub mgm: Aggregate,
}

/// Trains every seed; writes `seed-<s>/{checkpoint.json, metrics.json,
/// predictions.tsv}`, `summary.json` and `timing.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    begin(cfg)?;
    let results = per_seed(cfg, |seed| {
        let (run, timing, prep, trained, pred) = paired_run(cfg, seed, cfg.label_fraction)?;
        let dir = cfg.out.join(format!("seed-{seed}"));
        create_dir(&dir)?;
        save_mgm_checkpoint(&trained.model, &trained.memory, &trained.sampled, &dir.join("checkpoint.json"))?;
        write_json(&dir.join("metrics.json"), &run)?;
        write_json(&dir.join("history.json"), &trained.history)?;
        let g = &prep.data.graph;
        let ids: Vec<&str> = pred.nodes.iter().map(|&i| g.node_ids()[i].as_str()).collect();
        write_text(&dir.join("predictions.tsv"), &predictions_tsv(&ids, &pred.fused, &pred.labels, g.label_names()))?;
        Ok((run, timing))
    })?;
    let (runs, timings): (Vec<PairedRun>, Vec<RunTiming>) = results.into_iter().unzip();
    let summary = TrainSummary {
        task: cfg.task.clone(),
        encoder: cfg.encoder.to_string(),
        vanilla: Aggregate::of(runs.iter().map(|r| &r.vanilla)),
        mgm: Aggregate::of(runs.iter().map(|r| &r.mgm)),
        runs,
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    write_json(&cfg.out.join("timing.json"), &timings)?;
    Ok(summary)
}

/// Values that replace the checkpoint's own settings at prediction time.
#[derive(Debug, Clone, Default)]
pub struct PredictOptions {
    pub eta: Option<f64>,
    pub k: Option<usize>,
    pub memory_mode: Option<MemoryMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictSummary {
    pub rows: usize,
    pub eta: f64,
    pub k: usize,
    pub memory_mode: MemoryMode,
    pub memory_rows: usize,
    /// Over the requested nodes that have a known class.
    pub metrics: Option<MetricsReport>,
}

/// Classifies nodes with a saved checkpoint; writes `predictions.tsv`,
/// `probabilities.json` and `predict.json`.
pub fn cmd_predict(cfg: &RunConfig, opts: &PredictOptions) -> Result<PredictSummary> {
    begin(cfg)?;
    let path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| MgmError::Config("predict needs a checkpoint".into()))?;
    let (mut model, full, sampled) = load_mgm_checkpoint(path)?;
    if let Some(eta) = opts.eta {
        model.config.eta = eta;
    }
    if let Some(k) = opts.k {
        model.config.k = k;
    }
    if let Some(mode) = opts.memory_mode {
        model.config.memory_mode = mode;
    }
    model.config.validate()?;
    let data = load_dataset(cfg, cfg.seeds[0])?;
    let g = &data.graph;
    for (r, &node) in full.nodes.iter().enumerate() {
        if g.node_ids().get(node) != Some(&full.node_ids[r]) {
            return Err(MgmError::Precondition(format!(
                "checkpoint memory node {} is not node {node} of this graph",
                full.node_ids[r]
            )));
        }
    }
    let index = g.index_of();
    let nodes: Vec<usize> = if cfg.predict_nodes.is_empty() {
        (0..g.n_nodes()).collect()
    } else {
        cfg.predict_nodes
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| MgmError::Prediction(format!("unknown node id {id}")))
            })
            .collect::<Result<_>>()?
    };
    let inputs = EncoderInputs::new(model.gnn.encoder.config(), g)?;
    let memory = match model.config.memory_mode {
        MemoryMode::Full => &full,
        MemoryMode::Sampled => &sampled,
    };
    let pred = predict(&model, memory, &inputs, &nodes)?;

    let ids: Vec<&str> = nodes.iter().map(|&i| g.node_ids()[i].as_str()).collect();
    write_text(&cfg.out.join("predictions.tsv"), &predictions_tsv(&ids, &pred.fused, &pred.labels, g.label_names()))?;
    let mut table = ProbabilityTable::new("graph", g.n_classes());
    table.labels = g.label_names().to_vec();
    for (r, id) in ids.iter().enumerate() {
        table.insert(*id, pred.fused.row(r).to_vec())?;
    }
    save_probabilities(&table, &cfg.out.join("probabilities.json"))?;

    let known = |i: usize| match &data.truth {
        Some(t) => Some(t[i]),
        None => g.labels()[i],
    };
    let (mut p, mut gold) = (Vec::new(), Vec::new());
    for (r, &i) in nodes.iter().enumerate() {
        if let Some(c) = known(i) {
            p.push(pred.labels[r]);
            gold.push(c);
        }
    }
    let metrics = if gold.is_empty() {
        None
    } else {
        Some(compute_metrics(&p, &gold, g.n_classes())?)
    };
    let summary = PredictSummary {
        rows: nodes.len(),
        eta: model.config.eta,
        k: model.config.k,
        memory_mode: model.config.memory_mode,
        memory_rows: memory.len(),
        metrics,
    };
    write_json(&cfg.out.join("predict.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub k: usize,
    pub eta: f64,
    pub runs: usize,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

/// Grid over `(K, η)`; writes `sweep.csv` (one row per K, η, seed) and
/// `sweep_summary.csv`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<(Vec<SweepRow>, Vec<SweepSummaryRow>)> {
    cfg.validate_grid()?;
    begin(cfg)?;
    let per: Vec<Vec<SweepRow>> = per_seed(cfg, |seed| sweep_seed(cfg, seed))?;
    let rows: Vec<SweepRow> = per.into_iter().flatten().collect();
    let mut summary = Vec::new();
    for &k in &cfg.sweep_k {
        for &eta in &eta_grid(&cfg.sweep_eta) {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.k == k && r.eta == eta).collect();
            let f1 = MeanStd::of(&sel.iter().map(|r| r.macro_f1).collect::<Vec<_>>());
            let acc = MeanStd::of(&sel.iter().map(|r| r.accuracy).collect::<Vec<_>>());
            summary.push(SweepSummaryRow {
                k,
                eta,
                runs: sel.len(),
                macro_f1_mean: f1.mean,
                macro_f1_std: f1.std,
                accuracy_mean: acc.mean,
                accuracy_std: acc.std,
            });
        }
    }
    write_csv(&cfg.out.join("sweep.csv"), &rows)?;
    write_csv(&cfg.out.join("sweep_summary.csv"), &summary)?;
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionRow {
    pub fraction: f64,
    pub seed: u64,
    pub vanilla_macro_f1: f64,
    pub mgm_macro_f1: f64,
    pub vanilla_accuracy: f64,
    pub mgm_accuracy: f64,
}

/// Paired vanilla/MGM runs at each label fraction; writes
/// `label_fraction.csv`.
pub fn cmd_label_fraction(cfg: &RunConfig) -> Result<Vec<FractionRow>> {
    cfg.validate_fractions(&cfg.fractions, "label fraction")?;
    begin(cfg)?;
    let mut rows = Vec::new();
    for &fraction in &cfg.fractions {
        let runs = per_seed(cfg, |seed| Ok(paired_run(cfg, seed, fraction)?.0))
            .map_err(|e| e.context(format!("label fraction {fraction}")))?;
        rows.extend(runs.into_iter().map(|r| FractionRow {
            fraction,
            seed: r.seed,
            vanilla_macro_f1: r.vanilla.macro_f1,
            mgm_macro_f1: r.mgm.macro_f1,
            vanilla_accuracy: r.vanilla.accuracy,
            mgm_accuracy: r.mgm.accuracy,
        }));
    }
    write_csv(&cfg.out.join("label_fraction.csv"), &rows)?;
    Ok(rows)
}

/// One fit per seed scored with memories cut to each mass; writes
/// `memory_fraction.csv`.
pub fn cmd_memory_fraction(cfg: &RunConfig) -> Result<Vec<MassRow>> {
    cfg.validate_fractions(&cfg.masses, "memory mass")?;
    begin(cfg)?;
    let rows: Vec<MassRow> = per_seed(cfg, |seed| memory_fraction_seed(cfg, seed))?
        .into_iter()
        .flatten()
        .collect();
    write_csv(&cfg.out.join("memory_fraction.csv"), &rows)?;
    Ok(rows)
}

/// Writes a synthetic graph per seed as `seed-<s>/{nodes, edges, labels,
/// truth}.tsv`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    begin(cfg)?;
    for &seed in &cfg.seeds {
        let (g, truth) = synth_graph(&SynthConfig { seed, ..cfg.synth.clone() }).map_err(|e| e.context(format!("seed {seed}")))?;
        let dir = cfg.out.join(format!("seed-{seed}"));
        create_dir(&dir)?;
        save_graph(&g, &dir.join("nodes.tsv"), &dir.join("edges.tsv"), &dir.join("labels.tsv"))?;
        let mut text = String::from("node_id\tlabel\n");
        for (i, id) in g.node_ids().iter().enumerate() {
            text.push_str(&format!("{id}\t{}\n", g.label_names()[truth[i]]));
        }
        write_text(&dir.join("truth.tsv"), &text)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseSummary {
    pub train_media: usize,
    pub test_media: usize,
    pub stages: Vec<StageReport>,
}

/// Late-fusion stages; writes `stage-<n>.json`, `fused-stage-<n>.json` and
/// `fuse.json`. With a fixture configured, its tables are written to
/// `fixture/` first.
pub fn cmd_fuse(cfg: &RunConfig) -> Result<FuseSummary> {
    begin(cfg)?;
    let f = &cfg.fuse;
    let (gold, label_names, text, graph) = match &f.fixture {
        Some(fx) => {
            let fixture = fusion_fixture(&FixtureConfig { seed: cfg.seeds[0], ..*fx })?;
            let dir = cfg.out.join("fixture");
            create_dir(&dir)?;
            save_probabilities(&fixture.text, &dir.join("text.json"))?;
            save_probabilities(&fixture.graph, &dir.join("graph.json"))?;
            let mut gold_tsv = String::from("media_id\tlabel\n");
            for (id, &c) in &fixture.gold {
                gold_tsv.push_str(&format!("{id}\t{}\n", fixture.label_names[c]));
            }
            write_text(&dir.join("gold.tsv"), &gold_tsv)?;
            (fixture.gold, fixture.label_names, vec![fixture.text], vec![fixture.graph])
        }
        None => {
            let gold_path = f
                .gold
                .as_deref()
                .ok_or_else(|| MgmError::Config("fuse needs fuse.gold or fuse.fixture".into()))?;
            if f.label_names.is_empty() {
                return Err(MgmError::Config("fuse.label_names is empty".into()));
            }
            let c = f.label_names.len();
            let load = |paths: &[std::path::PathBuf]| -> Result<Vec<ProbabilityTable>> {
                paths.iter().map(|p| load_probabilities(p, c)).collect()
            };
            (read_label_map(gold_path, &f.label_names)?, f.label_names.clone(), load(&f.text)?, load(&f.graph)?)
        }
    };
    let split = split_media(&gold, label_names.len(), f.test_fraction, cfg.seeds[0])?;
    let mut stages = Vec::new();
    for &stage in &f.stages {
        let report = run_stage(&StageInputs {
            stage,
            gold: gold.clone(),
            n_classes: label_names.len(),
            text: text.clone(),
            graph: graph.clone(),
            split: split.clone(),
            meta: f.meta,
        })
        .map_err(|e| e.context(format!("stage {stage}")))?;
        write_json(&cfg.out.join(format!("stage-{stage}.json")), &report)?;
        if let Some(fused) = &report.fused {
            let mut fused = fused.clone();
            fused.labels = label_names.clone();
            save_probabilities(&fused, &cfg.out.join(format!("fused-stage-{stage}.json")))?;
        }
        stages.push(report);
    }
    let summary = FuseSummary {
        train_media: split.train.len(),
        test_media: split.test.len(),
        stages,
    };
    write_json(&cfg.out.join("fuse.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub scored: usize,
    /// Predicted ids without a gold label.
    pub unmatched: usize,
    pub metrics: MetricsReport,
}

/// Scores a predictions TSV against the graph labels (or the synthetic
/// truth); writes `eval.json`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalSummary> {
    begin(cfg)?;
    let path = cfg
        .predictions
        .as_deref()
        .ok_or_else(|| MgmError::Config("eval needs a predictions file".into()))?;
    let data = load_dataset(cfg, cfg.seeds[0])?;
    let g = &data.graph;
    let gold: BTreeMap<&str, usize> = g
        .node_ids()
        .iter()
        .enumerate()
        .filter_map(|(i, id)| {
            let c = match &data.truth {
                Some(t) => Some(t[i]),
                None => g.labels()[i],
            };
            c.map(|c| (id.as_str(), c))
        })
        .collect();
    let predicted = read_predictions(path, g.label_names())?;
    let (mut p, mut t, mut unmatched) = (Vec::new(), Vec::new(), 0);
    for (id, c) in &predicted {
        match gold.get(id.as_str()) {
            Some(&g) => {
                p.push(*c);
                t.push(g);
            }
            None => unmatched += 1,
        }
    }
    if t.is_empty() {
        return Err(MgmError::Precondition("no predicted node has a gold label".into()));
    }
    let summary = EvalSummary {
        scored: t.len(),
        unmatched,
        metrics: compute_metrics(&p, &t, g.n_classes())?,
    };
    write_json(&cfg.out.join("eval.json"), &summary)?;
    Ok(summary)
}
