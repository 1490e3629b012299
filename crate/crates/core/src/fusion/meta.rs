//! Multinomial logistic regression over concatenated probability features.

use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::{matmul, matmul_at};
use crate::autodiff::Tensor;
use crate::error::{MgmError, Result};

use super::table::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Penalty `l2/2 · ‖W‖²` on the weights (not the intercept), added to
    /// the summed cross-entropy.
    pub l2: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            l2: 1.0,
            max_iterations: 5000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLearner {
    /// `F×C`.
    pub weights: Tensor,
    pub intercept: Vec<f64>,
    pub l2: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Appends a column of ones.
fn with_bias(x: &Tensor) -> Tensor {
    let f = x.cols();
    let mut data = Vec::with_capacity(x.rows() * (f + 1));
    for i in 0..x.rows() {
        data.extend_from_slice(x.row(i));
        data.push(1.0);
    }
    Tensor::matrix(x.rows(), f + 1, data)
}

/// Largest eigenvalue of `XᵀX` by power iteration from the all-ones vector.
fn gram_spectral_radius(x: &Tensor) -> f64 {
    let f = x.cols();
    let mut v = Tensor::filled(f, 1, 1.0 / (f as f64).sqrt());
    let mut radius = 0.0;
    for _ in 0..200 {
        let w = matmul_at(x, &matmul(x, &v));
        let norm = w.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = Tensor::matrix(f, 1, w.data().iter().map(|a| a / norm).collect());
        if (next - radius).abs() <= 1e-12 * next {
            radius = next;
            break;
        }
        radius = next;
    }
    radius
}

fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = Vec::with_capacity(logits.len());
    for i in 0..logits.rows() {
        out.extend(softmax(logits.row(i)));
    }
    Tensor::matrix(logits.rows(), logits.cols(), out)
}

/// Gradient of the penalized summed cross-entropy at `theta`.
fn gradient(x: &Tensor, y: &Tensor, theta: &Tensor, l2: f64) -> Tensor {
    let (n, c) = (y.rows(), y.cols());
    let f = theta.rows() - 1;
    let p = softmax_rows(&matmul(x, theta));
    let residual = Tensor::matrix(n, c, p.data().iter().zip(y.data()).map(|(a, b)| a - b).collect());
    let mut grad = matmul_at(x, &residual);
    for r in 0..f {
        for k in 0..c {
            let g = grad.get(r, k) + l2 * theta.get(r, k);
            grad.set(r, k, g);
        }
    }
    grad
}

/// Full-batch accelerated gradient descent (Nesterov momentum with
/// gradient-based restart) with step `1/L`, where
/// `L = ½·λmax(X̃ᵀX̃)·1.05 + l2` bounds the curvature (X̃ has the bias
/// column). Stops at gradient norm below the tolerance or after the
/// iteration cap.
pub fn fit_meta_learner(features: &Tensor, labels: &[usize], n_classes: usize, config: &MetaConfig) -> Result<MetaLearner> {
    let (n, f) = (features.rows(), features.cols());
    if labels.len() != n || n == 0 {
        return Err(MgmError::Fit(format!("{n} feature rows for {} labels", labels.len())));
    }
    if labels.iter().any(|&y| y >= n_classes) {
        return Err(MgmError::Fit(format!("label outside {n_classes} classes")));
    }
    if let Some(c) = (0..n_classes).find(|c| !labels.contains(c)) {
        return Err(MgmError::Fit(format!("class {c} has no training example")));
    }
    if !(config.l2 >= 0.0) {
        return Err(MgmError::Config(format!("L2 strength {} must be non-negative", config.l2)));
    }
    let x = with_bias(features);
    let mut y = Tensor::zeros(n, n_classes);
    for (i, &c) in labels.iter().enumerate() {
        y.set(i, c, 1.0);
    }
    let step = 1.0 / (0.5 * gram_spectral_radius(&x) * 1.05 + config.l2);
    let mut theta = Tensor::zeros(f + 1, n_classes);
    let mut look = theta.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < config.max_iterations {
        let g_theta = gradient(&x, &y, &theta, config.l2);
        grad_norm = g_theta.data().iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < config.tolerance {
            break;
        }
        let g = gradient(&x, &y, &look, config.l2);
        let next: Vec<f64> = look.data().iter().zip(g.data()).map(|(v, d)| v - step * d).collect();
        // restart the momentum when it points uphill
        let uphill: f64 = g
            .data()
            .iter()
            .zip(next.iter().zip(theta.data()))
            .map(|(d, (a, b))| d * (a - b))
            .sum();
        let t_next = if uphill > 0.0 { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        let momentum = if uphill > 0.0 { 0.0 } else { (t - 1.0) / t_next };
        let ahead: Vec<f64> = next
            .iter()
            .zip(theta.data())
            .map(|(a, b)| a + momentum * (a - b))
            .collect();
        theta = Tensor::matrix(f + 1, n_classes, next);
        look = Tensor::matrix(f + 1, n_classes, ahead);
        t = t_next;
        iterations += 1;
    }
    let weights = Tensor::matrix(f, n_classes, theta.data()[..f * n_classes].to_vec());
    Ok(MetaLearner {
        weights,
        intercept: theta.row(f).to_vec(),
        l2: config.l2,
        iterations,
        gradient_norm: grad_norm,
    })
}

impl MetaLearner {
    pub fn n_features(&self) -> usize {
        self.weights.rows()
    }

    pub fn predict_proba(&self, features: &Tensor) -> Result<Tensor> {
        if features.cols() != self.n_features() {
            return Err(MgmError::Shape(format!(
                "meta-learner takes {} features, got {}",
                self.n_features(),
                features.cols()
            )));
        }
        let mut logits = matmul(features, &self.weights);
        let c = self.intercept.len();
        for (k, v) in logits.data_mut().iter_mut().enumerate() {
            *v += self.intercept[k % c];
        }
        Ok(softmax_rows(&logits))
    }
}
