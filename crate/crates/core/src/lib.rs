//! Semi-supervised node classification with a memory of globally similar
//! labeled nodes, trained by variational EM on top of message-passing
//! encoders, plus late fusion with externally produced text-model
//! probabilities.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod backbones;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod harness;
pub mod memory;
pub mod mgm;
pub mod par;
pub mod rng;

pub use error::{MgmError, Result};
