//! Between/within-chain convergence diagnostics and Monte Carlo error.

use crate::error::{Error, Result};

/// Default potential-scale-reduction threshold below which a quantity is
/// declared converged.
pub const RHAT_THRESHOLD: f64 = 1.05;

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.iter().all(|&v| v == x[0]) {
        return (x[0], 0.0);
    }
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Potential scale reduction factor
/// `sqrt(((n - 1) / n W + B / n) / W)` for `m >= 2` chains of equal length
/// `n >= 10`. Chains that never move at all give an indeterminate error;
/// chains stuck at different constants give infinity.
pub fn gelman_rubin(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Invalid("need at least two chains".into()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Invalid("chains have unequal lengths".into()));
    }
    if n < 10 {
        return Err(Error::Invalid(format!("need at least 10 draws per chain, got {n}")));
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b = nf / (m - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    if w == 0.0 {
        return if b == 0.0 {
            Err(Error::Indeterminate("zero within-chain variance in every chain".into()))
        } else {
            Ok(f64::INFINITY)
        };
    }
    Ok((((nf - 1.0) / nf * w + b / nf) / w).sqrt())
}

/// Batch-means estimate of the asymptotic variance `sigma^2` in
/// `var(mean) ~ sigma^2 / n`, with `floor(sqrt(n))` batches.
pub fn batch_means_variance(x: &[f64]) -> f64 {
    let n = x.len();
    let batches = (n as f64).sqrt().floor() as usize;
    if batches < 2 {
        return mean_var(x).1;
    }
    let size = n / batches;
    let means: Vec<f64> = (0..batches).map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    size as f64 * mean_var(&means).1
}

/// Monte Carlo standard error of the pooled mean over several chains.
pub fn mcse(chains: &[&[f64]]) -> f64 {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let sigma2 = chains.iter().map(|c| batch_means_variance(c) * c.len() as f64).sum::<f64>() / total as f64;
    (sigma2 / total as f64).sqrt()
}
