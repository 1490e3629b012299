//! Log-gamma, digamma and trigamma.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Second derivative of `ln Γ(x)` for `x > 0`.
///
/// Shifts the argument above 10 with `ψ₁(x) = ψ₁(x + 1) + 1/x²`, then sums the
/// asymptotic Bernoulli series.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        + inv2 / 2.0
        + inv * inv2
            * (1.0 / 6.0
                - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0))));
    acc + series
}
