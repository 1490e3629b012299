//! Closed-form densities and divergences of the MGM model, and the numeric
//! (tape-free) predictive pieces.

use crate::autodiff::special::ln_gamma;
use crate::autodiff::{kl_dirichlet_value, Tensor};
use crate::error::{MgmError, Result};

/// Off-simplex slack accepted by [`dirichlet_log_density`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

fn check_simplex(p: &[f64], what: &str, tol: f64) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > tol {
        return Err(MgmError::Domain(format!("{what} is not on the simplex (sum {sum})")));
    }
    Ok(())
}

/// `ln Dir(ω; α)` including the normalizing constant.
pub fn dirichlet_log_density(omega: &[f64], alpha: &[f64]) -> Result<f64> {
    if omega.len() != alpha.len() || omega.is_empty() {
        return Err(MgmError::Shape(format!(
            "ω has {} entries, α has {}",
            omega.len(),
            alpha.len()
        )));
    }
    if alpha.iter().any(|a| !(*a > 0.0)) {
        return Err(MgmError::Domain("Dirichlet concentrations must be positive".into()));
    }
    check_simplex(omega, "ω", SIMPLEX_TOLERANCE)?;
    let a0: f64 = alpha.iter().sum();
    let mut value = ln_gamma(a0);
    for (w, a) in omega.iter().zip(alpha) {
        value -= ln_gamma(*a);
        if *a != 1.0 {
            value += (a - 1.0) * w.ln();
        }
    }
    Ok(value)
}

/// Diagonal Gaussian with one shared variance.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicGaussian {
    pub mean: Tensor,
    pub variance: f64,
}

impl IsotropicGaussian {
    pub fn log_density(&self, z: &Tensor) -> Result<f64> {
        if z.shape() != self.mean.shape() {
            return Err(MgmError::Shape(format!(
                "sample {:?} vs mean {:?}",
                z.shape(),
                self.mean.shape()
            )));
        }
        let n = z.len() as f64;
        let sq: f64 = z.data().iter().zip(self.mean.data()).map(|(a, b)| (a - b).powi(2)).sum();
        Ok(-0.5 * n * (2.0 * std::f64::consts::PI * self.variance).ln() - 0.5 * sq / self.variance)
    }

    /// Reparameterized draw `mean + σ · noise`.
    pub fn sample(&self, noise: &Tensor) -> Result<Tensor> {
        if noise.shape() != self.mean.shape() {
            return Err(MgmError::Shape(format!(
                "noise {:?} vs mean {:?}",
                noise.shape(),
                self.mean.shape()
            )));
        }
        let sd = self.variance.sqrt();
        let data = self.mean.data().iter().zip(noise.data()).map(|(m, e)| m + sd * e).collect();
        Ok(Tensor::matrix(self.mean.rows(), self.mean.cols(), data))
    }
}

/// Prior over embeddings centred on the encoder output.
pub fn prior_z(encoder_out: &Tensor, sigma1_sq: f64) -> Result<IsotropicGaussian> {
    if !(sigma1_sq > 0.0) {
        return Err(MgmError::Domain(format!("prior variance {sigma1_sq} must be positive")));
    }
    Ok(IsotropicGaussian {
        mean: encoder_out.clone(),
        variance: sigma1_sq,
    })
}

/// `KL(Dir(λ) ‖ Dir(α))`.
pub fn kl_dirichlet(lambda: &[f64], alpha: &[f64]) -> Result<f64> {
    if lambda.len() != alpha.len() || lambda.is_empty() {
        return Err(MgmError::Shape(format!(
            "λ has {} entries, α has {}",
            lambda.len(),
            alpha.len()
        )));
    }
    if lambda.iter().chain(alpha).any(|v| !(*v > 0.0)) {
        return Err(MgmError::Domain("Dirichlet parameters must be positive".into()));
    }
    Ok(kl_dirichlet_value(lambda, alpha).max(0.0))
}

/// `KL(N(q_mean, diag q_var) ‖ N(p_mean, diag p_var))` summed over dimensions.
pub fn kl_gaussian(q_mean: &[f64], q_var: &[f64], p_mean: &[f64], p_var: &[f64]) -> Result<f64> {
    let n = q_mean.len();
    if q_var.len() != n || p_mean.len() != n || p_var.len() != n {
        return Err(MgmError::Shape("Gaussian parameter lengths differ".into()));
    }
    if q_var.iter().chain(p_var).any(|v| !(*v > 0.0)) {
        return Err(MgmError::Domain("variances must be positive".into()));
    }
    Ok((0..n)
        .map(|i| {
            let d = q_mean[i] - p_mean[i];
            0.5 * ((p_var[i] / q_var[i]).ln() + (q_var[i] + d * d) / p_var[i] - 1.0)
        })
        .sum())
}

/// `K · Σ q ln(q / p)` between multinomials sharing the count `K`.
pub fn kl_multinomial(q: &[f64], p: &[f64], k: usize) -> Result<f64> {
    if q.len() != p.len() || q.is_empty() {
        return Err(MgmError::Shape(format!("q has {} entries, p has {}", q.len(), p.len())));
    }
    if k == 0 {
        return Err(MgmError::Precondition("multinomial count must be at least 1".into()));
    }
    check_simplex(q, "q", SIMPLEX_TOLERANCE)?;
    check_simplex(p, "p", SIMPLEX_TOLERANCE)?;
    let mut kl = 0.0;
    for (i, (&qi, &pi)) in q.iter().zip(p).enumerate() {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return Err(MgmError::Training(format!(
                "multinomial KL is infinite: q[{i}] = {qi} where p[{i}] = 0"
            )));
        }
        kl += qi * (qi / pi).ln();
    }
    Ok((k as f64 * kl).max(0.0))
}

/// Label histogram of the selected candidates divided by `K = Σ counts`.
pub fn classify_global(counts: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    if counts.len() != labels.len() {
        return Err(MgmError::Shape(format!(
            "{} counts for {} candidates",
            counts.len(),
            labels.len()
        )));
    }
    let k: usize = counts.iter().sum();
    if k == 0 {
        return Err(MgmError::Precondition("no similar node selected".into()));
    }
    let mut p = vec![0.0; n_classes];
    for (&t, &y) in counts.iter().zip(labels) {
        if y >= n_classes {
            return Err(MgmError::Precondition(format!("label {y} outside {n_classes} classes")));
        }
        p[y] += t as f64;
    }
    p.iter_mut().for_each(|v| *v /= k as f64);
    Ok(p)
}

/// `η · p_local + (1 − η) · p_global`.
pub fn fuse_predictions(p_local: &[f64], p_global: &[f64], eta: f64) -> Result<Vec<f64>> {
    if p_local.len() != p_global.len() {
        return Err(MgmError::Shape(format!(
            "local has {} classes, global has {}",
            p_local.len(),
            p_global.len()
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(MgmError::Config(format!("eta {eta} outside [0, 1]")));
    }
    Ok(p_local
        .iter()
        .zip(p_global)
        .map(|(l, g)| eta * l + (1.0 - eta) * g)
        .collect())
}
