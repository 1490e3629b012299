//! Minimal numerical kernel: dense and sparse tensors, a define-by-run
//! reverse-mode tape, and the Adam optimizer.

mod adam;
pub mod check;
pub mod kernels;
mod params;
mod sparse;
pub mod special;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use params::{Param, ParamGroup, ParamId, ParamSet};
pub use sparse::SparseMatrix;
pub use tape::{kl_dirichlet_value, softplus_inverse, Gradients, Tape, Var};
pub use tensor::Tensor;

/// `a × b` outside of any tape.
pub fn matmul(a: &Tensor, b: &Tensor) -> crate::Result<Tensor> {
    if a.cols() != b.rows() {
        return Err(crate::MgmError::Shape(format!(
            "matmul: {:?} × {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(kernels::matmul(a, b))
}

/// `adj × x` outside of any tape.
pub fn spmm(adj: &SparseMatrix, x: &Tensor) -> crate::Result<Tensor> {
    adj.matmul_dense(x)
}

pub fn softplus(x: f64) -> f64 {
    tape::softplus(x)
}
