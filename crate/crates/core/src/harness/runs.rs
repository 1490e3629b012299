//! Seeded experiment runs shared by the commands.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backbones::{argmax_rows, pretrain, Pretrained};
use crate::error::Result;
use crate::fusion::mean_std;
use crate::graph::{compute_metrics, make_splits, MetricsReport, SplitMasks};
use crate::memory::select_fraction;
use crate::mgm::{fit_mgm, predict, MgmConfig, Prediction, TrainedMgm};
use crate::rng::SeedStreams;

use super::config::RunConfig;
use super::data::{load_dataset, Dataset};

/// Data, splits and pre-trained backbone of one seed.
pub struct Prepared {
    pub seed: u64,
    pub data: Dataset,
    pub masks: SplitMasks,
    pub pre: Pretrained,
    pub pretrain_minutes: f64,
}

pub fn prepare(cfg: &RunConfig, seed: u64, label_fraction: f64) -> Result<Prepared> {
    let data = load_dataset(cfg, seed)?;
    let masks = make_splits(&data.graph, cfg.splits, label_fraction, seed)?;
    let started = Instant::now();
    let pre = pretrain(
        &cfg.encoder_settings(),
        &data.graph,
        &masks,
        &cfg.pretrain,
        &SeedStreams::new(seed),
    )?;
    Ok(Prepared {
        seed,
        data,
        masks,
        pre,
        pretrain_minutes: started.elapsed().as_secs_f64() / 60.0,
    })
}

impl Prepared {
    pub fn vanilla_metrics(&self) -> Result<MetricsReport> {
        let (nodes, gold) = self.data.evaluation_targets(&self.masks);
        let probs = self.pre.model.predict_proba(&self.pre.inputs)?.select_rows(&nodes);
        compute_metrics(&argmax_rows(&probs), &gold, self.data.graph.n_classes())
    }

    /// EM on a copy of the pre-trained backbone.
    pub fn fit(&self, mgm: &MgmConfig) -> Result<(TrainedMgm, f64)> {
        let started = Instant::now();
        let trained = fit_mgm(
            self.pre.clone(),
            &self.data.graph,
            &self.masks,
            mgm,
            &SeedStreams::new(self.seed),
        )?;
        Ok((trained, started.elapsed().as_secs_f64() / 60.0))
    }

    /// Scores `trained` on the evaluation nodes with its configured memory.
    pub fn evaluate(&self, trained: &TrainedMgm) -> Result<(MetricsReport, Prediction)> {
        self.evaluate_with(trained, trained.prediction_memory())
    }

    pub fn evaluate_with(&self, trained: &TrainedMgm, memory: &crate::memory::MemoryBank) -> Result<(MetricsReport, Prediction)> {
        let (nodes, gold) = self.data.evaluation_targets(&self.masks);
        let pred = predict(&trained.model, memory, &trained.inputs, &nodes)?;
        let report = compute_metrics(&pred.labels, &gold, self.data.graph.n_classes())?;
        Ok((report, pred))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub seed: u64,
    pub label_fraction: f64,
    pub vanilla: MetricsReport,
    pub mgm: MetricsReport,
    pub best_iteration: usize,
    pub em_iterations: usize,
}

/// Wall-clock minutes; kept apart from metrics so reruns compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub seed: u64,
    pub vanilla_minutes: f64,
    pub mgm_minutes: f64,
}

/// Pre-trains, fits MGM and scores both on one seed.
pub fn paired_run(cfg: &RunConfig, seed: u64, label_fraction: f64) -> Result<(PairedRun, RunTiming, Prepared, TrainedMgm, Prediction)> {
    let prep = prepare(cfg, seed, label_fraction)?;
    let vanilla = prep.vanilla_metrics()?;
    let (trained, em_minutes) = prep.fit(&cfg.effective_mgm())?;
    let (mgm, pred) = prep.evaluate(&trained)?;
    let run = PairedRun {
        seed,
        label_fraction,
        vanilla,
        mgm,
        best_iteration: trained.best_iteration,
        em_iterations: trained.history.len(),
    };
    let timing = RunTiming {
        seed,
        vanilla_minutes: prep.pretrain_minutes,
        mgm_minutes: prep.pretrain_minutes + em_minutes,
    };
    Ok((run, timing, prep, trained, pred))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        MeanStd { mean, std }
    }
}

/// Mean and sample standard deviation of the headline metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub macro_f1: MeanStd,
    pub accuracy: MeanStd,
    pub average_recall: MeanStd,
}

impl Aggregate {
    pub fn of<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> Self {
        let reports: Vec<&MetricsReport> = reports.into_iter().collect();
        let pick = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        Aggregate {
            runs: reports.len(),
            macro_f1: pick(|r| r.macro_f1),
            accuracy: pick(|r| r.accuracy),
            average_recall: pick(|r| r.average_recall),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub eta: f64,
    pub seed: u64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub average_recall: f64,
}

/// The η grid with 1.0 appended when missing, so every sweep carries the
/// vanilla baseline.
pub fn eta_grid(etas: &[f64]) -> Vec<f64> {
    let mut grid = etas.to_vec();
    if !grid.contains(&1.0) {
        grid.push(1.0);
    }
    grid
}

/// One pre-training per seed, then one EM fit per `(K, η)`.
pub fn sweep_seed(cfg: &RunConfig, seed: u64) -> Result<Vec<SweepRow>> {
    let prep = prepare(cfg, seed, cfg.label_fraction)?;
    let mut rows = Vec::new();
    for &k in &cfg.sweep_k {
        for &eta in &eta_grid(&cfg.sweep_eta) {
            let mgm = MgmConfig {
                k,
                eta,
                ..cfg.mgm.clone()
            };
            let (trained, _) = prep.fit(&mgm)?;
            let (r, _) = prep.evaluate(&trained)?;
            rows.push(SweepRow {
                k,
                eta,
                seed,
                macro_f1: r.macro_f1,
                accuracy: r.accuracy,
                average_recall: r.average_recall,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassRow {
    pub mass: f64,
    pub seed: u64,
    pub memory_rows: usize,
    pub retained_mass: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// One EM fit per seed, scored with memories reduced to each mass.
pub fn memory_fraction_seed(cfg: &RunConfig, seed: u64) -> Result<Vec<MassRow>> {
    let prep = prepare(cfg, seed, cfg.label_fraction)?;
    let (trained, _) = prep.fit(&cfg.effective_mgm())?;
    let omega = trained.model.expected_omega()?;
    cfg.masses
        .iter()
        .map(|&mass| {
            let memory = select_fraction(&trained.memory, &omega, mass)?;
            let (r, _) = prep.evaluate_with(&trained, &memory)?;
            Ok(MassRow {
                mass,
                seed,
                memory_rows: memory.len(),
                retained_mass: memory.retained_mass,
                macro_f1: r.macro_f1,
                accuracy: r.accuracy,
            })
        })
        .collect()
}
