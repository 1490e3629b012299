use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, ParamGroup, ParamSet, Tape, Tensor};
use crate::backbones::{argmax_rows, EncoderConfig, EncoderInputs, GnnModel};
use crate::error::{MgmError, Result};
use crate::graph::{Graph, SplitMasks};
use crate::rng::SeedStreams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Improved,
    Waiting,
    Stop,
}

/// Patience-based stopping rule. Only a strict improvement resets the
/// counter; `Stop` is returned once `patience` observations in a row fail
/// to improve.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    goal: Goal,
    patience: usize,
    best: Option<f64>,
    best_step: usize,
    waited: usize,
}

impl EarlyStopping {
    pub fn new(goal: Goal, patience: usize) -> Self {
        EarlyStopping {
            goal,
            patience,
            best: None,
            best_step: 0,
            waited: 0,
        }
    }

    pub fn observe(&mut self, step: usize, value: f64) -> Observation {
        let better = match (self.best, self.goal) {
            (None, _) => true,
            (Some(b), Goal::Minimize) => value < b,
            (Some(b), Goal::Maximize) => value > b,
        };
        if better {
            self.best = Some(value);
            self.best_step = step;
            self.waited = 0;
            return Observation::Improved;
        }
        self.waited += 1;
        if self.waited >= self.patience {
            Observation::Stop
        } else {
            Observation::Waiting
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_step(&self) -> usize {
        self.best_step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            learning_rate: 1e-3,
            max_epochs: 300,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub model: GnnModel,
    pub inputs: EncoderInputs,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// One-hot rows for labeled nodes, zero rows elsewhere.
pub(crate) fn one_hot_targets(graph: &Graph) -> Tensor {
    let mut t = Tensor::zeros(graph.n_nodes(), graph.n_classes());
    for (i, l) in graph.labels().iter().enumerate() {
        if let Some(c) = l {
            t.set(i, *c, 1.0);
        }
    }
    t
}

/// Masked loss and accuracy of the current parameters, no gradients.
fn evaluate(model: &GnnModel, inputs: &EncoderInputs, targets: &Tensor, graph: &Graph, mask: &[bool]) -> Result<(f64, f64)> {
    let tape = Tape::new();
    let z = model.encoder.forward(&tape, &model.params, inputs, true, None)?;
    let logits = model.head.apply(&tape, &model.params, z, true)?;
    let loss = logits.softmax_cross_entropy(targets, mask)?.item();
    let pred = argmax_rows(&logits.value());
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, &m) in mask.iter().enumerate() {
        if m {
            total += 1;
            hit += usize::from(graph.labels()[i] == Some(pred[i]));
        }
    }
    Ok((loss, hit as f64 / total as f64))
}

/// Supervised training of encoder and head by masked cross-entropy with
/// Adam. Stops when validation loss has not strictly improved for
/// `patience` epochs and restores the best parameters. Without validation
/// nodes the training loss is monitored instead.
pub fn pretrain(
    config: &EncoderConfig,
    graph: &Graph,
    masks: &SplitMasks,
    settings: &PretrainConfig,
    streams: &SeedStreams,
) -> Result<Pretrained> {
    if !masks.train.iter().any(|&m| m) {
        return Err(MgmError::Precondition("training mask is empty".into()));
    }
    let inputs = EncoderInputs::new(config, graph)?;
    let mut init = streams.stream("init");
    let mut model = GnnModel::new(config, inputs.features.cols(), graph.n_classes(), &mut init)?;
    let mut dropout_rng = streams.stream("dropout");
    let targets = one_hot_targets(graph);
    let monitor: &[bool] = if masks.val.iter().any(|&m| m) {
        &masks.val
    } else {
        &masks.train
    };

    let mut adam = AdamState::new(settings.learning_rate);
    let mut stopper = EarlyStopping::new(Goal::Minimize, settings.patience);
    let mut best: ParamSet = model.params.clone();
    let mut curve = Vec::new();
    for epoch in 1..=settings.max_epochs {
        let tape = Tape::new();
        let drop = (config.dropout > 0.0).then_some(&mut dropout_rng);
        let z = model.encoder.forward(&tape, &model.params, &inputs, false, drop)?;
        let logits = model.head.apply(&tape, &model.params, z, false)?;
        let loss = logits.softmax_cross_entropy(&targets, &masks.train)?;
        let train_loss = loss.item();
        if !train_loss.is_finite() {
            return Err(MgmError::Training(format!("non-finite training loss at epoch {epoch}")));
        }
        tape.backward(loss)?.write_to(&mut model.params);
        adam.step(&mut model.params, &[ParamGroup::Model])?;

        let (val_loss, val_accuracy) = evaluate(&model, &inputs, &targets, graph, monitor)?;
        if !val_loss.is_finite() {
            return Err(MgmError::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        match stopper.observe(epoch, val_loss) {
            Observation::Improved => best = model.params.clone(),
            Observation::Waiting => {}
            Observation::Stop => break,
        }
    }
    model.params = best;
    model.params.clear_grads();
    Ok(Pretrained {
        model,
        inputs,
        curve,
        best_epoch: stopper.best_step(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_after_patience_worsening_steps() {
        let mut s = EarlyStopping::new(Goal::Minimize, 10);
        assert_eq!(s.observe(0, 1.0), Observation::Improved);
        for k in 1..10 {
            assert_eq!(s.observe(k, 1.0 + k as f64), Observation::Waiting);
        }
        assert_eq!(s.observe(10, 20.0), Observation::Stop);
        assert_eq!(s.best_step(), 0);
    }

    #[test]
    fn ties_do_not_reset_patience() {
        let mut s = EarlyStopping::new(Goal::Maximize, 2);
        s.observe(0, 0.5);
        assert_eq!(s.observe(1, 0.5), Observation::Waiting);
        assert_eq!(s.observe(2, 0.5), Observation::Stop);
        let mut s = EarlyStopping::new(Goal::Maximize, 2);
        s.observe(0, 0.5);
        s.observe(1, 0.4);
        assert_eq!(s.observe(2, 0.6), Observation::Improved);
        assert_eq!(s.observe(3, 0.1), Observation::Waiting);
    }
}
