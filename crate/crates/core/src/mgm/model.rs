//! Parameters of the full model and the evidence lower bound recorded on a
//! tape.

use std::rc::Rc;

use rand::Rng;

use crate::autodiff::kernels::normalize_rows;
use crate::autodiff::{softplus, softplus_inverse, ParamGroup, ParamId, ParamSet, Tape, Tensor, Var};
use crate::backbones::{EncoderInputs, GnnModel, Linear};
use crate::error::{MgmError, Result};
use crate::memory::{expected_omega, MemoryBank, MemoryMode};
use crate::rng::StreamRng;

use super::config::MgmConfig;

/// Likelihoods below this are clamped before the logarithm.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

/// Half-width of the uniform init of the correction network.
const CORRECTION_INIT: f64 = 1e-2;

/// Encoder and head (θ) plus the prior variance, the variational query map,
/// label bonus, correction network (φ) and Dirichlet parameters λ.
#[derive(Debug, Clone, PartialEq)]
pub struct MgmModel {
    pub gnn: GnnModel,
    pub config: MgmConfig,
    /// Raw prior variance; `σ1² = softplus(raw)`.
    pub sigma: ParamId,
    pub query_map: ParamId,
    pub beta: ParamId,
    pub correction: Linear,
    /// Raw Dirichlet parameters over the full memory; `λ = softplus(raw)`.
    pub lambda: ParamId,
    /// Prior concentrations aligned with the full memory.
    pub alpha: Vec<f64>,
}

/// Which parameter group is updated by a pass; the other enters as
/// constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    Model,
    Variational,
    Both,
}

impl Trainable {
    fn model_frozen(self) -> bool {
        self == Trainable::Variational
    }

    fn variational_frozen(self) -> bool {
        self == Trainable::Model
    }
}

impl MgmModel {
    /// Appends the memory-side parameters to a pre-trained model. `memory`
    /// must be the full memory; λ starts at `α_i + 1/N_l`.
    pub fn new(gnn: GnnModel, memory: &MemoryBank, config: &MgmConfig, rng: &mut StreamRng) -> Result<Self> {
        config.validate()?;
        if memory.mode != MemoryMode::Full || memory.is_empty() {
            return Err(MgmError::Precondition("the model is built over a non-empty full memory".into()));
        }
        let mut gnn = gnn;
        let d = gnn.encoder.out_dim();
        if memory.dim() != d || memory.n_classes != gnn.n_classes() {
            return Err(MgmError::Shape(format!(
                "memory {}-dim over {} classes, encoder {}-dim over {}",
                memory.dim(),
                memory.n_classes,
                d,
                gnn.n_classes()
            )));
        }
        let c = gnn.n_classes();
        let n = memory.len();
        let alpha: Vec<f64> = memory
            .node_ids
            .iter()
            .map(|id| config.alpha_overrides.get(id).copied().unwrap_or(config.alpha))
            .collect();
        let p = &mut gnn.params;
        let sigma = p.add("prior.sigma", ParamGroup::Model, Tensor::scalar(softplus_inverse(config.sigma1_init)));
        let query_map = p.add("posterior.query_map", ParamGroup::Variational, Tensor::zeros(d, d));
        let beta = p.add("posterior.beta", ParamGroup::Variational, Tensor::scalar(1.0));
        let w = (0..(d + c) * 2 * d)
            .map(|_| rng.random_range(-CORRECTION_INIT..CORRECTION_INIT))
            .collect();
        let correction = Linear::from_values(
            p,
            "posterior.correction",
            ParamGroup::Variational,
            Tensor::matrix(d + c, 2 * d, w),
            Tensor::zeros(1, 2 * d),
        );
        let raw: Vec<f64> = alpha.iter().map(|a| softplus_inverse(a + 1.0 / n as f64)).collect();
        let lambda = p.add("posterior.lambda", ParamGroup::Variational, Tensor::matrix(1, n, raw));
        Ok(MgmModel {
            gnn,
            config: config.clone(),
            sigma,
            query_map,
            beta,
            correction,
            lambda,
            alpha,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.gnn.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.gnn.params
    }

    pub fn sigma1_sq(&self) -> f64 {
        softplus(self.params().tensor(self.sigma).item())
    }

    /// Current Dirichlet parameters λ over the full memory.
    pub fn lambda_values(&self) -> Vec<f64> {
        self.params().tensor(self.lambda).data().iter().map(|&r| softplus(r)).collect()
    }

    /// `E[ω]` over the full memory.
    pub fn expected_omega(&self) -> Result<Vec<f64>> {
        expected_omega(&self.lambda_values())
    }

    pub fn memory_size(&self) -> usize {
        self.alpha.len()
    }
}

/// Fixed inputs of the bound: every memory node is a query.
#[derive(Debug, Clone)]
pub struct ElboBatch {
    pub queries: Rc<Vec<usize>>,
    /// `S×C` one-hot labels of the queries.
    pub targets: Tensor,
    /// `S×M`, 1 where query and candidate share a label.
    pub same_label: Tensor,
    /// `S×M`, false on each query's own memory row.
    pub mask: Rc<Vec<bool>>,
}

impl ElboBatch {
    pub fn new(memory: &MemoryBank) -> Self {
        let m = memory.len();
        let mut same = Tensor::zeros(m, m);
        let mut mask = vec![true; m * m];
        for s in 0..m {
            mask[s * m + s] = false;
            for r in 0..m {
                if memory.labels[s] == memory.labels[r] {
                    same.set(s, r, 1.0);
                }
            }
        }
        ElboBatch {
            queries: Rc::new(memory.nodes.clone()),
            targets: memory.label_matrix(),
            same_label: same,
            mask: Rc::new(mask),
        }
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Values of the bound and its parts after one pass.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ElboTerms {
    pub elbo: f64,
    pub log_likelihood: f64,
    pub kl_omega: f64,
    pub kl_z: f64,
    pub kl_t: f64,
}

/// Records the bound on `tape`, one Monte-Carlo sample per noise tensor
/// (`S×d` standard normal each).
///
/// The prior over similar nodes uses `E[ln ω]` under `Dir(λ)`; the
/// posterior sees the query embeddings detached, so it is moved only by
/// the variational parameters.
#[allow(clippy::too_many_arguments)]
pub fn elbo_on_tape<'t>(
    tape: &'t Tape,
    model: &MgmModel,
    inputs: &EncoderInputs,
    memory: &MemoryBank,
    batch: &ElboBatch,
    trainable: Trainable,
    noise: &[Tensor],
) -> Result<(Var<'t>, ElboTerms)> {
    let params = model.params();
    let (s, m, d) = (batch.len(), memory.len(), memory.dim());
    if memory.mode != MemoryMode::Full || m != model.memory_size() || batch.same_label.cols() != m {
        return Err(MgmError::Precondition("the bound is evaluated over the full memory".into()));
    }
    if noise.is_empty() || noise.iter().any(|e| e.shape() != [s, d]) {
        return Err(MgmError::Shape(format!("expected at least one {s}x{d} noise tensor")));
    }
    let freeze_model = trainable.model_frozen();
    let freeze_var = trainable.variational_frozen();
    let cfg = &model.config;

    let h = model.gnn.encoder.forward(tape, params, inputs, freeze_model, None)?;
    let hq = h.gather_rows(Rc::clone(&batch.queries))?;
    let zhat = tape.constant(memory.embeddings.clone());
    let zhat_unit = tape.constant(normalize_rows(&memory.embeddings).0.transpose());
    let same = tape.constant(batch.same_label.clone());
    let mask = Some(Rc::clone(&batch.mask));

    // prior over similar nodes
    let lam = tape.param(params, model.lambda, freeze_var).softplus();
    let ln_omega = lam.digamma().sub(lam.sum().digamma().broadcast(1, m)?)?;
    let prior_logits = hq.normalize_rows().matmul(zhat_unit)?.scale(1.0 / cfg.tau).add_row(ln_omega)?;
    let log_p = prior_logits.log_softmax_rows(mask.clone())?;

    // variational posterior over similar nodes
    let wq = tape.param(params, model.query_map, freeze_var);
    let beta = tape.param(params, model.beta, freeze_var);
    let post_logits = hq
        .detach()
        .matmul(wq)?
        .matmul(zhat.transpose())?
        .add(beta.broadcast(s, m)?.mul(same)?)?;
    let q = post_logits.softmax_rows(mask.clone())?;
    let log_q = post_logits.log_softmax_rows(mask)?;
    let kl_t = q.mul(log_q.sub(log_p)?)?.sum().scale(cfg.k as f64);

    // variational posterior over embeddings
    let targets = tape.constant(batch.targets.clone());
    let out = model
        .correction
        .apply(tape, params, q.matmul(zhat)?.concat_cols(targets)?, freeze_var)?;
    let shift = out.slice_cols(0, d)?;
    let logvar = out.slice_cols(d, 2 * d)?;
    let sigma_sq = tape.param(params, model.sigma, freeze_model).softplus();
    let sigma_b = sigma_sq.broadcast(s, d)?;
    let kl_z = sigma_b
        .ln()
        .sub(logvar)?
        .add(logvar.exp().add(shift.square())?.div(sigma_b)?)?
        .affine(1.0, -1.0)
        .sum()
        .scale(0.5);

    // fused likelihood of the observed labels
    let global = q.mul(same)?.sum_rows();
    let spread = logvar.scale(0.5).exp();
    let mut loglik: Option<Var<'t>> = None;
    for eps in noise {
        let z = hq.add(shift)?.add(spread.mul(tape.constant(eps.clone()))?)?;
        let logits = model.gnn.head.apply(tape, params, z, freeze_model)?;
        let local = logits.softmax_rows(None)?.mul(targets)?.sum_rows();
        let fused = local.scale(cfg.eta).add(global.scale(1.0 - cfg.eta))?;
        let ll = fused.ln_floor(LIKELIHOOD_FLOOR).sum();
        loglik = Some(match loglik {
            None => ll,
            Some(acc) => acc.add(ll)?,
        });
    }
    let loglik = loglik.expect("noise is non-empty").scale(1.0 / noise.len() as f64);
    let kl_omega = lam.kl_dirichlet(Rc::new(model.alpha.clone()))?;

    let elbo = loglik.sub(kl_omega)?.sub(kl_z)?.sub(kl_t)?;
    let terms = ElboTerms {
        elbo: elbo.item(),
        log_likelihood: loglik.item(),
        kl_omega: kl_omega.item(),
        kl_z: kl_z.item(),
        kl_t: kl_t.item(),
    };
    if !terms.elbo.is_finite() {
        return Err(MgmError::Training(format!("non-finite bound {terms:?}")));
    }
    Ok((elbo, terms))
}
