//! Message-passing encoders (GCN, SGC, GraphSAGE), a linear classifier head
//! and supervised pre-training.

mod checkpoint;
mod pretrain;

use std::fmt;
use std::sync::Arc;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, ParamId, ParamSet, SparseMatrix, Tape, Tensor, Var};
use crate::error::{MgmError, Result};
use crate::graph::{mean_adjacency, normalize_adjacency, Graph};
use crate::rng::StreamRng;

pub use checkpoint::{load_encoder_checkpoint, save_encoder_checkpoint, EncoderCheckpoint};
pub use pretrain::{pretrain, EarlyStopping, EpochRecord, Goal, Observation, PretrainConfig, Pretrained};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gcn,
    Sgc,
    Sage,
}

impl FromStr for EncoderKind {
    type Err = MgmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(EncoderKind::Gcn),
            "sgc" => Ok(EncoderKind::Sgc),
            "sage" | "graphsage" => Ok(EncoderKind::Sage),
            other => Err(MgmError::Config(format!("unknown encoder '{other}'"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Gcn => "gcn",
            EncoderKind::Sgc => "sgc",
            EncoderKind::Sage => "sage",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
    None,
}

impl Activation {
    fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Elu => x.elu(),
            Activation::None => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Output width of each layer; the last one is the embedding size.
    pub hidden: Vec<usize>,
    /// Propagation steps for SGC.
    pub hops: usize,
    /// Applied between layers, never after the last one.
    pub activation: Activation,
    pub dropout: f64,
    /// Use stored edge weights in aggregation (otherwise every edge counts 1).
    pub weighted: bool,
}

impl EncoderConfig {
    /// GCN: two layers of 16 with ReLU. SGC: two hops, one linear map to 256.
    /// GraphSAGE: mean aggregator, two layers of 64 with ELU.
    pub fn preset(kind: EncoderKind) -> Self {
        let (hidden, hops, activation) = match kind {
            EncoderKind::Gcn => (vec![16, 16], 0, Activation::Relu),
            EncoderKind::Sgc => (vec![256], 2, Activation::None),
            EncoderKind::Sage => (vec![64, 64], 0, Activation::Elu),
        };
        EncoderConfig {
            kind,
            hidden,
            hops,
            activation,
            dropout: 0.0,
            weighted: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(MgmError::Config(format!(
                "encoder widths {:?} must be non-empty and positive",
                self.hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MgmError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.kind == EncoderKind::Sgc && self.hidden.len() != 1 {
            return Err(MgmError::Config("SGC uses exactly one linear layer".into()));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        *self.hidden.last().expect("validated non-empty")
    }
}

/// Graph-derived constants an encoder consumes.
#[derive(Debug, Clone)]
pub struct EncoderInputs {
    /// Z-scored node features; for SGC already propagated `hops` times.
    pub features: Tensor,
    /// Â for GCN and SGC, the neighbor-mean operator for GraphSAGE.
    pub adjacency: Arc<SparseMatrix>,
}

impl EncoderInputs {
    pub fn new(config: &EncoderConfig, graph: &Graph) -> Result<Self> {
        let x = graph.standardized_features();
        let adjacency = match config.kind {
            EncoderKind::Sage => mean_adjacency(graph, config.weighted),
            _ => normalize_adjacency(graph, true, config.weighted),
        };
        Self::from_parts(config, adjacency, x)
    }

    /// Inputs from an explicit operator and feature matrix.
    pub fn from_parts(config: &EncoderConfig, adjacency: SparseMatrix, x: Tensor) -> Result<Self> {
        if adjacency.rows() != adjacency.cols() || adjacency.cols() != x.rows() {
            return Err(MgmError::Config(format!(
                "operator {}x{} does not match {} feature rows",
                adjacency.rows(),
                adjacency.cols(),
                x.rows()
            )));
        }
        let mut features = x;
        if config.kind == EncoderKind::Sgc {
            for _ in 0..config.hops {
                features = adjacency.matmul_dense(&features)?;
            }
        }
        Ok(EncoderInputs {
            features,
            adjacency: Arc::new(adjacency),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }
}

/// Affine map `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(
        params: &mut ParamSet,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        rng: &mut StreamRng,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self::from_values(params, name, group, Tensor::matrix(fan_in, fan_out, w), Tensor::zeros(1, fan_out))
    }

    pub fn from_values(params: &mut ParamSet, name: &str, group: ParamGroup, weight: Tensor, bias: Tensor) -> Self {
        Linear {
            weight: params.add(format!("{name}.weight"), group, weight),
            bias: params.add(format!("{name}.bias"), group, bias),
        }
    }

    pub fn apply<'t>(&self, tape: &'t Tape, params: &ParamSet, x: Var<'t>, frozen: bool) -> Result<Var<'t>> {
        let w = tape.param(params, self.weight, frozen);
        let b = tape.param(params, self.bias, frozen);
        x.matmul(w)?.add_row(b)
    }

    pub fn in_dim(&self, params: &ParamSet) -> usize {
        params.tensor(self.weight).rows()
    }

    pub fn out_dim(&self, params: &ParamSet) -> usize {
        params.tensor(self.weight).cols()
    }
}

/// Encoder structure; the weights live in a shared [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    in_dim: usize,
    layers: Vec<Linear>,
}

impl Encoder {
    pub fn new(config: &EncoderConfig, in_dim: usize, params: &mut ParamSet, rng: &mut StreamRng) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 {
            return Err(MgmError::Config("encoder input width is zero".into()));
        }
        let mut layers = Vec::with_capacity(config.hidden.len());
        let mut width = in_dim;
        for (k, &out) in config.hidden.iter().enumerate() {
            let fan_in = if config.kind == EncoderKind::Sage { 2 * width } else { width };
            layers.push(Linear::glorot(params, &format!("encoder.{k}"), ParamGroup::Model, fan_in, out, rng));
            width = out;
        }
        Ok(Encoder {
            config: config.clone(),
            in_dim,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    /// Records the encoder on `tape`. Dropout is active only when `dropout`
    /// supplies a random stream.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamSet,
        inputs: &EncoderInputs,
        frozen: bool,
        mut dropout: Option<&mut StreamRng>,
    ) -> Result<Var<'t>> {
        if inputs.features.cols() != self.in_dim {
            return Err(MgmError::Config(format!(
                "encoder expects {} features, inputs have {}",
                self.in_dim,
                inputs.features.cols()
            )));
        }
        let mut h = tape.constant(inputs.features.clone());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            if let Some(rng) = dropout.as_deref_mut() {
                h = apply_dropout(tape, h, self.config.dropout, rng)?;
            }
            h = match self.config.kind {
                EncoderKind::Gcn => {
                    let w = tape.param(params, layer.weight, frozen);
                    let b = tape.param(params, layer.bias, frozen);
                    h.matmul(w)?.spmm(&inputs.adjacency)?.add_row(b)?
                }
                EncoderKind::Sgc => layer.apply(tape, params, h, frozen)?,
                EncoderKind::Sage => {
                    let neighbors = h.spmm(&inputs.adjacency)?;
                    layer.apply(tape, params, h.concat_cols(neighbors)?, frozen)?
                }
            };
            if k < last {
                h = self.config.activation.apply(h);
            }
        }
        Ok(h)
    }

    /// Evaluation-mode embeddings.
    pub fn encode(&self, params: &ParamSet, inputs: &EncoderInputs) -> Result<Tensor> {
        let tape = Tape::new();
        let z = self.forward(&tape, params, inputs, true, None)?;
        Ok((*z.value()).clone())
    }
}

fn apply_dropout<'t>(tape: &'t Tape, h: Var<'t>, rate: f64, rng: &mut StreamRng) -> Result<Var<'t>> {
    if rate == 0.0 {
        return Ok(h);
    }
    let v = h.value();
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..v.len())
        .map(|_| if rng.random_bool(rate) { 0.0 } else { keep })
        .collect();
    h.mul(tape.constant(Tensor::matrix(v.rows(), v.cols(), mask)))
}

/// Encoder plus linear classification head over the embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub encoder: Encoder,
    pub head: Linear,
    pub params: ParamSet,
    n_classes: usize,
}

impl GnnModel {
    pub fn new(config: &EncoderConfig, in_dim: usize, n_classes: usize, rng: &mut StreamRng) -> Result<Self> {
        if n_classes == 0 {
            return Err(MgmError::Config("no classes".into()));
        }
        let mut params = ParamSet::new();
        let encoder = Encoder::new(config, in_dim, &mut params, rng)?;
        let head = Linear::glorot(&mut params, "head", ParamGroup::Model, encoder.out_dim(), n_classes, rng);
        Ok(GnnModel {
            encoder,
            head,
            params,
            n_classes,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Softmax of the head applied to evaluation-mode embeddings.
    pub fn predict_proba(&self, inputs: &EncoderInputs) -> Result<Tensor> {
        let tape = Tape::new();
        let z = self.encoder.forward(&tape, &self.params, inputs, true, None)?;
        let logits = self.head.apply(&tape, &self.params, z, true)?;
        Ok((*logits.softmax_rows(None)?.value()).clone())
    }
}

/// Softmax of a linear head over given embeddings.
pub fn classify_local(z: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if weight.rows() != z.cols() || bias.cols() != weight.cols() || bias.rows() != 1 {
        return Err(MgmError::Shape(format!(
            "head {:?} + {:?} over embeddings {:?}",
            weight.shape(),
            bias.shape(),
            z.shape()
        )));
    }
    let mut logits = crate::autodiff::kernels::matmul(z, weight);
    let c = weight.cols();
    for (k, v) in logits.data_mut().iter_mut().enumerate() {
        *v += bias.data()[k % c];
    }
    Ok(crate::autodiff::kernels::softmax_rows(&logits, None))
}

/// Row-wise argmax; ties go to the lower class index.
pub fn argmax_rows(p: &Tensor) -> Vec<usize> {
    (0..p.rows())
        .map(|i| {
            let row = p.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
