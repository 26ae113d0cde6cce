//! Posterior summaries over pooled post-burn-in draws.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::convergence::{gelman_rubin, mcse, RHAT_THRESHOLD};
use super::sampler::{RunOutput, SamplerConfig};
use crate::error::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantitySummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub p2_5: f64,
    pub p97_5: f64,
    /// Monte Carlo standard error of the mean.
    pub mcse: f64,
    /// Potential scale reduction; `None` when it cannot be computed or is
    /// infinite.
    pub rhat: Option<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub quantities: Vec<QuantitySummary>,
    /// Post-burn-in acceptance rate per sampler block.
    pub acceptance: BTreeMap<String, f64>,
    /// Posterior mean deviance per source.
    pub deviance: BTreeMap<String, f64>,
    pub converged: bool,
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarise_draws(name: &str, chains: &[Vec<f64>]) -> QuantitySummary {
    let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let sd = if pooled.len() > 1 {
        (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    pooled.sort_by(f64::total_cmp);
    let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
    let (rhat, converged) = match gelman_rubin(&refs) {
        Ok(r) if r.is_finite() => (Some(r), r < RHAT_THRESHOLD),
        Ok(_) => (None, false),
        Err(Error::Indeterminate(_)) => (None, true),
        Err(_) => (None, true),
    };
    QuantitySummary {
        name: name.to_string(),
        mean,
        sd,
        p2_5: quantile(&pooled, 0.025),
        p97_5: quantile(&pooled, 0.975),
        mcse: mcse(&refs),
        rhat,
        converged,
    }
}

impl PosteriorSummary {
    pub fn from_run(out: &RunOutput, config: &SamplerConfig) -> Self {
        let quantities: Vec<QuantitySummary> =
            (0..out.names.len()).map(|j| summarise_draws(&out.names[j], &out.columns(j))).collect();
        let deviance = quantities
            .iter()
            .filter_map(|q| q.name.strip_prefix("deviance.").map(|s| (s.to_string(), q.mean)))
            .filter(|(s, _)| s != "model")
            .collect();
        let converged = quantities.iter().all(|q| q.converged);
        PosteriorSummary {
            acceptance: out.block_names.iter().cloned().zip(out.acceptance()).collect(),
            quantities,
            deviance,
            converged,
            chains: config.chains,
            iterations: config.iterations,
            burn_in: config.burn_in,
            seed: config.seed,
        }
    }

    pub fn get(&self, name: &str) -> Option<&QuantitySummary> {
        self.quantities.iter().find(|q| q.name == name)
    }

    /// Whether every named quantity present in the summary converged.
    pub fn all_converged<S: AsRef<str>>(&self, names: &[S]) -> bool {
        names.iter().filter_map(|n| self.get(n.as_ref())).all(|q| q.converged)
    }

    /// Largest R-hat among the named quantities; infinite if any failed to
    /// produce a finite value without being trivially converged.
    pub fn max_rhat<S: AsRef<str>>(&self, names: &[S]) -> f64 {
        names
            .iter()
            .filter_map(|n| self.get(n.as_ref()))
            .map(|q| match q.rhat {
                Some(r) => r,
                None if q.converged => 0.0,
                None => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }

    pub fn model_deviance(&self) -> f64 {
        self.deviance.values().sum()
    }
}
