//! Variational EM over a pre-trained encoder.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, ParamGroup, ParamSet, Tape, Tensor};
use crate::backbones::{pretrain, EarlyStopping, EncoderConfig, EncoderInputs, EpochRecord, Goal, Observation, Pretrained, PretrainConfig};
use crate::error::{MgmError, Result};
use crate::graph::{compute_metrics, Graph, SplitMasks};
use crate::memory::{build_memory, select_candidates, MemoryBank, MemoryMode};
use crate::rng::{SeedStreams, StreamRng};

use super::config::MgmConfig;
use super::model::{elbo_on_tape, ElboBatch, ElboTerms, MgmModel, Trainable};
use super::predict::predict;

/// Source of the reparameterization noise.
pub enum Noise {
    /// Fresh standard-normal draws for every pass.
    Stream(StreamRng),
    /// The same tensors every pass.
    Fixed(Vec<Tensor>),
}

impl Noise {
    pub fn draw(&mut self, samples: usize, rows: usize, cols: usize) -> Vec<Tensor> {
        match self {
            Noise::Stream(rng) => (0..samples).map(|_| standard_normal(rng, rows, cols)).collect(),
            Noise::Fixed(t) => t.clone(),
        }
    }
}

pub fn standard_normal(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Value of the bound without updating anything.
pub fn evaluate_elbo(
    model: &MgmModel,
    inputs: &EncoderInputs,
    memory: &MemoryBank,
    batch: &ElboBatch,
    noise: &[Tensor],
) -> Result<ElboTerms> {
    let tape = Tape::new();
    Ok(elbo_on_tape(&tape, model, inputs, memory, batch, Trainable::Variational, noise)?.1)
}

fn ascend(
    model: &mut MgmModel,
    inputs: &EncoderInputs,
    memory: &MemoryBank,
    batch: &ElboBatch,
    opt: &mut AdamState,
    noise: &mut Noise,
    steps: usize,
    trainable: Trainable,
    group: ParamGroup,
) -> Result<ElboTerms> {
    let mut last = None;
    for _ in 0..steps {
        let eps = noise.draw(model.config.mc_samples, batch.len(), memory.dim());
        let tape = Tape::new();
        let (elbo, terms) = elbo_on_tape(&tape, model, inputs, memory, batch, trainable, &eps)?;
        // Adam minimizes, so descend on the negated bound
        tape.backward(elbo.scale(-1.0))?.write_to(model.params_mut());
        opt.step(model.params_mut(), &[group])?;
        last = Some(terms);
    }
    last.ok_or_else(|| MgmError::Config("zero inner steps".into()))
}

/// Updates φ and λ with θ held fixed. Returns the bound seen by the last
/// step (before its update).
#[allow(clippy::too_many_arguments)]
pub fn e_step(
    model: &mut MgmModel,
    inputs: &EncoderInputs,
    memory: &MemoryBank,
    batch: &ElboBatch,
    opt: &mut AdamState,
    noise: &mut Noise,
    steps: usize,
) -> Result<ElboTerms> {
    ascend(model, inputs, memory, batch, opt, noise, steps, Trainable::Variational, ParamGroup::Variational)
}

/// Updates θ with φ and λ held fixed.
#[allow(clippy::too_many_arguments)]
pub fn m_step(
    model: &mut MgmModel,
    inputs: &EncoderInputs,
    memory: &MemoryBank,
    batch: &ElboBatch,
    opt: &mut AdamState,
    noise: &mut Noise,
    steps: usize,
) -> Result<ElboTerms> {
    ascend(model, inputs, memory, batch, opt, noise, steps, Trainable::Model, ParamGroup::Model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Bound under a fixed probe noise, after the memory refresh.
    pub terms: ElboTerms,
    pub val_macro_f1: f64,
}

/// Output of [`fit_mgm`].
#[derive(Debug, Clone)]
pub struct TrainedMgm {
    pub model: MgmModel,
    pub inputs: EncoderInputs,
    /// Full memory, refreshed with the returned parameters.
    pub memory: MemoryBank,
    /// Candidates covering `mass` of the expected-ω weight.
    pub sampled: MemoryBank,
    pub pretrain_curve: Vec<EpochRecord>,
    pub history: Vec<IterationRecord>,
    /// Iteration whose parameters were kept (0 = pre-trained state).
    pub best_iteration: usize,
}

impl TrainedMgm {
    /// Memory selected by the configured mode.
    pub fn prediction_memory(&self) -> &MemoryBank {
        match self.model.config.memory_mode {
            MemoryMode::Full => &self.memory,
            MemoryMode::Sampled => &self.sampled,
        }
    }
}

fn macro_f1_on(model: &MgmModel, memory: &MemoryBank, inputs: &EncoderInputs, graph: &Graph, mask: &[bool]) -> Result<f64> {
    let nodes: Vec<usize> = (0..graph.n_nodes()).filter(|&i| mask[i]).collect();
    let gold: Vec<usize> = nodes.iter().map(|&i| graph.labels()[i].expect("split nodes are labeled")).collect();
    let pred = predict(model, memory, inputs, &nodes)?;
    Ok(compute_metrics(&pred.labels, &gold, graph.n_classes())?.macro_f1)
}

/// Pre-trains the encoder, then runs [`fit_mgm`].
pub fn train_em(
    graph: &Graph,
    masks: &SplitMasks,
    encoder: &EncoderConfig,
    pretraining: &PretrainConfig,
    config: &MgmConfig,
    streams: &SeedStreams,
) -> Result<TrainedMgm> {
    config.validate()?;
    let pre = pretrain(encoder, graph, masks, pretraining, streams)?;
    fit_mgm(pre, graph, masks, config, streams)
}

/// Alternates E- and M-steps on a pre-trained model.
///
/// After each M-step the memory is re-encoded and the validation macro-F1
/// of the full-memory prediction is recorded; training stops after
/// `patience` iterations without strict improvement and keeps the best
/// iterate. With `η = 1` the memory cannot affect anything and the
/// pre-trained model is returned as is.
pub fn fit_mgm(
    pre: Pretrained,
    graph: &Graph,
    masks: &SplitMasks,
    config: &MgmConfig,
    streams: &SeedStreams,
) -> Result<TrainedMgm> {
    config.validate()?;
    let Pretrained { model: gnn, inputs, curve, .. } = pre;
    let mut memory = build_memory(&gnn.encoder, &gnn.params, &inputs, graph, &masks.train)?;
    let mut init = streams.stream("mgm-init");
    let mut model = MgmModel::new(gnn, &memory, config, &mut init)?;
    let batch = ElboBatch::new(&memory);
    let monitor: &[bool] = if masks.val.iter().any(|&m| m) { &masks.val } else { &masks.train };

    let mut history = Vec::new();
    let mut best_iteration = 0;
    if !config.is_vanilla() {
        let probe = Noise::Stream(streams.stream("elbo-probe")).draw(config.mc_samples, batch.len(), memory.dim());
        let mut noise = Noise::Stream(streams.stream("em-noise"));
        let mut e_opt = AdamState::new(config.learning_rate);
        let mut m_opt = AdamState::new(config.learning_rate);
        let mut stopper = EarlyStopping::new(Goal::Maximize, config.patience);
        stopper.observe(0, macro_f1_on(&model, &memory, &inputs, graph, monitor)?);
        let mut best: (ParamSet, MemoryBank) = (model.params().clone(), memory.clone());
        for iteration in 1..=config.max_iterations {
            e_step(&mut model, &inputs, &memory, &batch, &mut e_opt, &mut noise, config.inner_steps)?;
            m_step(&mut model, &inputs, &memory, &batch, &mut m_opt, &mut noise, config.inner_steps)?;
            memory.refresh(&model.gnn.encoder, model.params(), &inputs)?;
            let terms = evaluate_elbo(&model, &inputs, &memory, &batch, &probe)?;
            let val_macro_f1 = macro_f1_on(&model, &memory, &inputs, graph, monitor)?;
            log::debug!("iteration {iteration}: elbo {:.4} val macro-F1 {val_macro_f1:.2}", terms.elbo);
            history.push(IterationRecord {
                iteration,
                terms,
                val_macro_f1,
            });
            match stopper.observe(iteration, val_macro_f1) {
                Observation::Improved => {
                    best = (model.params().clone(), memory.clone());
                    best_iteration = iteration;
                }
                Observation::Waiting => {}
                Observation::Stop => break,
            }
        }
        model.params_mut().load_values(&best.0)?;
        memory = best.1;
    }
    model.params_mut().clear_grads();
    let sampled = select_candidates(&memory, &model.expected_omega()?, config.mass)?;
    Ok(TrainedMgm {
        model,
        inputs,
        memory,
        sampled,
        pretrain_curve: curve,
        history,
        best_iteration,
    })
}
