//! The four late-fusion stages and their evaluation split.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{MgmError, Result};
use crate::graph::{apportion, compute_metrics, MetricsReport};
use crate::rng::SeedStreams;

use super::meta::{fit_meta_learner, MetaConfig};
use super::table::{impute_missing, softmax, Fallback, ProbabilityTable, Provenance};

/// Held-out share of the media used when no split is given (85 of 472).
pub const DEFAULT_TEST_FRACTION: f64 = 85.0 / 472.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Stratified train/test division of the labeled media. Each class gives
/// its largest-remainder share of `round(test_fraction · N)` test media.
pub fn split_media(gold: &BTreeMap<String, usize>, n_classes: usize, test_fraction: f64, seed: u64) -> Result<FuseSplit> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(MgmError::Config(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut by_class: Vec<Vec<String>> = vec![Vec::new(); n_classes];
    for (id, &c) in gold {
        if c >= n_classes {
            return Err(MgmError::Pipeline(format!("{id}: label {c} outside {n_classes} classes")));
        }
        by_class[c].push(id.clone());
    }
    let sizes: Vec<f64> = by_class.iter().map(|v| v.len() as f64).collect();
    let n_test = (test_fraction * gold.len() as f64).round() as usize;
    let quota = apportion(n_test, &sizes);
    let mut rng = SeedStreams::new(seed).stream("fuse-split");
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (ids, q) in by_class.iter_mut().zip(quota) {
        ids.shuffle(&mut rng);
        test.extend(ids[..q].iter().cloned());
        train.extend(ids[q..].iter().cloned());
    }
    train.sort();
    test.sort();
    Ok(FuseSplit { train, test })
}

#[derive(Debug, Clone)]
pub struct StageInputs {
    pub stage: u8,
    pub gold: BTreeMap<String, usize>,
    pub n_classes: usize,
    /// Text tables: one for stages 1 and 2, two for stages 3 and 4.
    pub text: Vec<ProbabilityTable>,
    /// Graph tables: one for stage 2 (and optionally 3), a multiple of
    /// three for stage 4.
    pub graph: Vec<ProbabilityTable>,
    pub split: FuseSplit,
    pub meta: MetaConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    /// Sources of the concatenated feature blocks, in order (first run).
    pub features: Vec<String>,
    pub runs: Vec<MetricsReport>,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    /// Provenance of the first text table's vectors.
    pub provenance: BTreeMap<String, Provenance>,
    /// Meta-learner probabilities for every labeled media, averaged over runs.
    #[serde(skip)]
    pub fused: Option<ProbabilityTable>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn require<'a>(tables: &'a [ProbabilityTable], k: usize, what: &str, stage: u8) -> Result<&'a ProbabilityTable> {
    tables
        .get(k)
        .ok_or_else(|| MgmError::Pipeline(format!("stage {stage} needs {what}")))
}

fn covering<'a>(t: &'a ProbabilityTable, universe: &[String], stage: u8) -> Result<&'a ProbabilityTable> {
    if let Some(id) = universe.iter().find(|id| t.get(id).is_none()) {
        return Err(MgmError::Pipeline(format!(
            "stage {stage}: graph table `{}` has no entry for {id}",
            t.source
        )));
    }
    Ok(t)
}

/// Feature blocks of each run, plus the provenance of the first text table.
type Blocks = (Vec<Vec<ProbabilityTable>>, BTreeMap<String, Provenance>);

fn stage_blocks(inputs: &StageInputs, universe: &[String]) -> Result<Blocks> {
    let s = inputs.stage;
    let text0 = require(&inputs.text, 0, "a text probability table", s)?;
    let impute = |t: &ProbabilityTable, g: Option<&ProbabilityTable>| match g {
        Some(g) => impute_missing(t, Fallback::Table(g), universe),
        None => impute_missing(t, Fallback::Zeros, universe),
    };
    match s {
        1 => {
            let a = impute(text0, None)?;
            Ok((vec![vec![a.table]], a.provenance))
        }
        2 => {
            let g = covering(require(&inputs.graph, 0, "a graph probability table", s)?, universe, s)?;
            let a = impute(text0, Some(g))?;
            Ok((vec![vec![a.table]], a.provenance))
        }
        3 => {
            let text1 = require(&inputs.text, 1, "two text probability tables", s)?;
            let g = match inputs.graph.first() {
                Some(g) => Some(covering(g, universe, s)?),
                None => None,
            };
            let a = impute(text0, g)?;
            let b = impute(text1, g)?;
            Ok((vec![vec![a.table, b.table]], a.provenance))
        }
        4 => {
            let text1 = require(&inputs.text, 1, "two text probability tables", s)?;
            if inputs.graph.is_empty() || !inputs.graph.len().is_multiple_of(3) {
                return Err(MgmError::Pipeline(format!(
                    "stage 4 needs graph tables in groups of three, got {}",
                    inputs.graph.len()
                )));
            }
            let mut runs = Vec::new();
            let mut provenance = BTreeMap::new();
            for group in inputs.graph.chunks(3) {
                for g in group {
                    covering(g, universe, s)?;
                }
                let a = impute(text0, Some(&group[0]))?;
                let b = impute(text1, Some(&group[0]))?;
                if runs.is_empty() {
                    provenance = a.provenance;
                }
                let mut blocks = vec![a.table, b.table];
                blocks.extend(group.iter().cloned());
                runs.push(blocks);
            }
            Ok((runs, provenance))
        }
        other => Err(MgmError::Config(format!("stage {other} is not one of 1-4"))),
    }
}

fn feature_matrix(blocks: &[ProbabilityTable], ids: &[String]) -> Tensor {
    let width: usize = blocks.iter().map(|b| b.n_classes).sum();
    let mut data = Vec::with_capacity(ids.len() * width);
    for id in ids {
        for b in blocks {
            data.extend_from_slice(b.get(id).expect("imputed over the universe"));
        }
    }
    Tensor::matrix(ids.len(), width, data)
}

/// Fits the meta-learner on the training media and reports metrics on the
/// test media. Stage 4 fits one learner per group of three graph tables and
/// summarizes them by mean and standard deviation.
pub fn run_stage(inputs: &StageInputs) -> Result<StageReport> {
    let c = inputs.n_classes;
    let universe: Vec<String> = inputs.gold.keys().cloned().collect();
    for t in inputs.text.iter().chain(&inputs.graph) {
        if t.n_classes != c {
            return Err(MgmError::Pipeline(format!(
                "table `{}` has {} classes, expected {c}",
                t.source, t.n_classes
            )));
        }
    }
    for id in inputs.split.train.iter().chain(&inputs.split.test) {
        if !inputs.gold.contains_key(id) {
            return Err(MgmError::Pipeline(format!("split media {id} has no gold label")));
        }
    }
    if inputs.split.train.is_empty() || inputs.split.test.is_empty() {
        return Err(MgmError::Pipeline("train and test media must both be non-empty".into()));
    }
    let (runs, provenance) = stage_blocks(inputs, &universe)?;
    let y_train: Vec<usize> = inputs.split.train.iter().map(|id| inputs.gold[id]).collect();
    let y_test: Vec<usize> = inputs.split.test.iter().map(|id| inputs.gold[id]).collect();

    let mut reports = Vec::new();
    let mut summed = vec![0.0; universe.len() * c];
    for blocks in &runs {
        let learner = fit_meta_learner(&feature_matrix(blocks, &inputs.split.train), &y_train, c, &inputs.meta)?;
        if learner.gradient_norm >= inputs.meta.tolerance {
            log::info!(
                "meta-learner stopped at {} iterations with gradient norm {:.2e}",
                learner.iterations,
                learner.gradient_norm
            );
        }
        let p_test = learner.predict_proba(&feature_matrix(blocks, &inputs.split.test))?;
        let pred = crate::backbones::argmax_rows(&p_test);
        reports.push(compute_metrics(&pred, &y_test, c)?);
        let p_all = learner.predict_proba(&feature_matrix(blocks, &universe))?;
        for (s, v) in summed.iter_mut().zip(p_all.data()) {
            *s += v;
        }
    }
    let mut fused = ProbabilityTable::new(format!("stage{}", inputs.stage), c);
    for (k, id) in universe.iter().enumerate() {
        let v: Vec<f64> = summed[k * c..(k + 1) * c].iter().map(|s| s / runs.len() as f64).collect();
        fused.entries.insert(id.clone(), v);
    }
    let f1: Vec<f64> = reports.iter().map(|r| r.macro_f1).collect();
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let (macro_f1_mean, macro_f1_std) = mean_std(&f1);
    let (accuracy_mean, accuracy_std) = mean_std(&acc);
    Ok(StageReport {
        stage: inputs.stage,
        features: runs[0].iter().map(|t| t.source.clone()).collect(),
        runs: reports,
        macro_f1_mean,
        macro_f1_std,
        accuracy_mean,
        accuracy_std,
        provenance,
        fused: Some(fused),
    })
}

/// Labeled media with text predictions for only part of them, and graph
/// predictions for all.
#[derive(Debug, Clone)]
pub struct FusionFixture {
    pub gold: BTreeMap<String, usize>,
    pub label_names: Vec<String>,
    pub text: ProbabilityTable,
    pub graph: ProbabilityTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub n_media: usize,
    pub n_classes: usize,
    /// Share of media without a text prediction.
    pub missing_text: f64,
    /// Logit margin of the true class in each model.
    pub text_signal: f64,
    pub graph_signal: f64,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            n_media: 400,
            n_classes: 3,
            missing_text: 0.45,
            text_signal: 2.0,
            graph_signal: 1.5,
            seed: 0,
        }
    }
}

/// Probabilities are `softmax(signal · onehot(y) + ε)` with standard
/// normal `ε`; exactly `round(missing_text · N)` media lack text.
pub fn fusion_fixture(cfg: &FixtureConfig) -> Result<FusionFixture> {
    if cfg.n_classes < 2 || cfg.n_media < 2 * cfg.n_classes || !(0.0..1.0).contains(&cfg.missing_text) {
        return Err(MgmError::Generation(format!("unusable fixture settings {cfg:?}")));
    }
    let streams = SeedStreams::new(cfg.seed);
    let (c, n) = (cfg.n_classes, cfg.n_media);
    let ids: Vec<String> = (0..n).map(|i| format!("media{i:04}.example")).collect();
    // balanced labels in shuffled order
    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut streams.stream("fixture-labels"));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut streams.stream("fixture-missing"));
    let n_missing = (cfg.missing_text * n as f64).round() as usize;
    let mut missing = vec![false; n];
    order[..n_missing].iter().for_each(|&i| missing[i] = true);

    let label_names: Vec<String> = (0..c).map(|k| format!("class{k}")).collect();
    let mut text = ProbabilityTable::new("fixture-text", c);
    let mut graph = ProbabilityTable::new("fixture-graph", c);
    text.labels = label_names.clone();
    graph.labels = label_names.clone();
    let mut text_rng = streams.stream("fixture-text");
    let mut graph_rng = streams.stream("fixture-graph");
    let draw = |rng: &mut crate::rng::StreamRng, y: usize, signal: f64| {
        let logits: Vec<f64> = (0..c)
            .map(|k| {
                let noise: f64 = StandardNormal.sample(rng);
                if k == y { signal + noise } else { noise }
            })
            .collect();
        softmax(&logits)
    };
    let mut gold = BTreeMap::new();
    for i in 0..n {
        gold.insert(ids[i].clone(), labels[i]);
        // draw text for every media so the graph stream does not depend on
        // which ones are missing
        let t = draw(&mut text_rng, labels[i], cfg.text_signal);
        if !missing[i] {
            text.insert(ids[i].clone(), t)?;
        }
        graph.insert(ids[i].clone(), draw(&mut graph_rng, labels[i], cfg.graph_signal))?;
    }
    Ok(FusionFixture {
        gold,
        label_names,
        text,
        graph,
    })
}
