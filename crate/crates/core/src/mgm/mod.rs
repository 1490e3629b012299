//! Memory-augmented model: a pre-trained graph encoder whose local
//! prediction is fused with a vote over similar labeled nodes, trained by
//! variational EM.

mod checkpoint;
mod config;
pub mod distributions;
mod model;
mod predict;
mod train;

pub use checkpoint::{load_mgm_checkpoint, save_mgm_checkpoint, MgmCheckpoint};
pub use config::MgmConfig;
pub use distributions::{
    classify_global, dirichlet_log_density, fuse_predictions, kl_dirichlet, kl_gaussian, kl_multinomial, prior_z,
    IsotropicGaussian,
};
pub use model::{elbo_on_tape, ElboBatch, ElboTerms, MgmModel, Trainable, LIKELIHOOD_FLOOR};
pub use predict::{predict, similar_node_prior, top_k_rows, Prediction};
pub use train::{
    e_step, evaluate_elbo, fit_mgm, m_step, standard_normal, train_em, IterationRecord, Noise, TrainedMgm,
};
