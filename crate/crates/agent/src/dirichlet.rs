//! Dirichlet density, entropy and their derivatives with respect to the concentrations.

use statrs::function::gamma::{digamma, ln_gamma};

/// Entries of evaluation points are clamped into `[POINT_CLAMP, 1 − POINT_CLAMP]`.
pub const POINT_CLAMP: f64 = 1e-9;

/// `ψ'(x)` for `x > 0`: recurrence up to `x ≥ 10`, then the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        + inv2 / 2.0
        + inv
            * inv2
            * (1.0 / 6.0
                - inv2
                    * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0))));
    acc + series
}

/// Clamps a simplex point away from the boundary and renormalizes.
pub fn clamp_point(x: &[f64]) -> Vec<f64> {
    let c: Vec<f64> = x
        .iter()
        .map(|v| v.clamp(POINT_CLAMP, 1.0 - POINT_CLAMP))
        .collect();
    let s: f64 = c.iter().sum();
    c.into_iter().map(|v| v / s).collect()
}

/// `ln Dir(x | α)` for an interior point `x`.
pub fn ln_density(alpha: &[f64], x: &[f64]) -> f64 {
    let a0: f64 = alpha.iter().sum();
    let norm = ln_gamma(a0) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
    norm + alpha
        .iter()
        .zip(x)
        .map(|(a, xi)| (a - 1.0) * xi.ln())
        .sum::<f64>()
}

/// `∂/∂α_i ln Dir(x | α) = ψ(α₀) − ψ(α_i) + ln x_i`.
pub fn ln_density_grad(alpha: &[f64], x: &[f64]) -> Vec<f64> {
    let psi0 = digamma(alpha.iter().sum());
    alpha
        .iter()
        .zip(x)
        .map(|(&a, xi)| psi0 - digamma(a) + xi.ln())
        .collect()
}

/// Differential entropy of `Dir(α)`.
pub fn entropy(alpha: &[f64]) -> f64 {
    let k = alpha.len() as f64;
    let a0: f64 = alpha.iter().sum();
    let ln_beta = alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(a0);
    ln_beta + (a0 - k) * digamma(a0) - alpha.iter().map(|&a| (a - 1.0) * digamma(a)).sum::<f64>()
}

/// `∂H/∂α_i = (α₀ − K)·ψ'(α₀) − (α_i − 1)·ψ'(α_i)`.
pub fn entropy_grad(alpha: &[f64]) -> Vec<f64> {
    let k = alpha.len() as f64;
    let a0: f64 = alpha.iter().sum();
    let common = (a0 - k) * trigamma(a0);
    alpha
        .iter()
        .map(|&a| common - (a - 1.0) * trigamma(a))
        .collect()
}

/// The mode `(α_i − 1)/(α₀ − K)` when every `α_i > 1`, otherwise the mean `α/α₀`.
pub fn mode_or_mean(alpha: &[f64]) -> Vec<f64> {
    let a0: f64 = alpha.iter().sum();
    if alpha.iter().all(|&a| a > 1.0) {
        let denom = a0 - alpha.len() as f64;
        alpha.iter().map(|a| (a - 1.0) / denom).collect()
    } else {
        alpha.iter().map(|a| a / a0).collect()
    }
}
