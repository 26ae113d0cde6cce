//! Additive log-ratio coordinates for simplexes.
//!
//! `x_i = ln(p_i / p_k)` for `i < k`. The log-Jacobian of `x -> p` is
//! `sum_i ln p_i` over all `k` components, so a Dirichlet(alpha) prior
//! contributes `sum_i alpha_i ln p_i` in these coordinates (up to constants).

use crate::error::{Error, Result};

/// Maps a strictly positive simplex to `k - 1` coordinates.
pub fn simplex_to_alr(p: &[f64]) -> Result<Vec<f64>> {
    let (&last, head) = p.split_last().ok_or(Error::LengthMismatch { expected: 2, got: 0 })?;
    if p.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Invalid("log-ratio transform needs strictly positive mass".into()));
    }
    Ok(head.iter().map(|&v| (v / last).ln()).collect())
}

/// Inverse of [`simplex_to_alr`], computed as a shifted softmax.
pub fn alr_to_simplex(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(0.0_f64, f64::max);
    let mut p: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    p.push((-m).exp());
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// `sum_i ln p_i` evaluated stably from the coordinates.
pub fn alr_log_jacobian(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(0.0_f64, f64::max);
    let lse = m + (x.iter().map(|&v| (v - m).exp()).sum::<f64>() + (-m).exp()).ln();
    x.iter().sum::<f64>() - (x.len() as f64 + 1.0) * lse
}
