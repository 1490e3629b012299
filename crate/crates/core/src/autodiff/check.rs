//! Finite-difference gradient checking.

use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{MgmError, Result};

/// Compares the tape gradient of a scalar function against central
/// differences with the given step.
///
/// Returns `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over all
/// inputs jointly, or 0 when both gradients vanish.
pub fn gradient_error<F>(inputs: &[Tensor], step: f64, f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values.iter().map(|t| tape.variable(t.clone())).collect();
        let out = f(&tape, &vars)?;
        if out.value().len() != 1 {
            return Err(MgmError::Shape(format!(
                "gradient check needs a scalar, got {:?}",
                out.shape()
            )));
        }
        Ok(out.item())
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut analytic = Vec::new();
    for (v, t) in vars.iter().zip(inputs) {
        match grads.wrt(*v) {
            Some(g) => analytic.extend_from_slice(g),
            None => analytic.extend(std::iter::repeat_n(0.0, t.len())),
        }
    }

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work = inputs.to_vec();
    for k in 0..inputs.len() {
        for j in 0..inputs[k].len() {
            let x = inputs[k].data()[j];
            work[k].data_mut()[j] = x + step;
            let up = eval(&work)?;
            work[k].data_mut()[j] = x - step;
            let down = eval(&work)?;
            work[k].data_mut()[j] = x;
            numeric.push((up - down) / (2.0 * step));
        }
    }

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(norm(&diff) / scale)
}
