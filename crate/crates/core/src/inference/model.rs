//! The joint posterior over regression coefficients, bias terms and the
//! three drug-use-history simplexes.
//!
//! Coordinates are laid out as
//! `[24 regression | K bias | 6 duration | 6 tss | 9 aafu]`, the simplexes in
//! additive log-ratio form.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::sampler::{run, LogDensity, RunOutput, SamplerConfig};
use super::summary::PosteriorSummary;
use super::transform::{alr_log_jacobian, alr_to_simplex, simplex_to_alr};
use crate::diagnostics::{deviance_binomial_term, deviance_multinomial};
use crate::error::{Error, Result};
use crate::history::HistoryCache;
use crate::num::inv_logit;
use crate::observation::{
    apply_bias, ln_binomial_coefficient, ln_multinomial_coefficient, loglik_binomial_kernel,
    loglik_multinomial_kernel, BiasComposition, BiasKey, BiasParams, BiasStructure, HistoryTarget, ObservationSet,
    Target,
};
use crate::params::{DrugHistory, RegressionParams, REGRESSION_DIM};
use crate::quantities::{tracked_names, StratifiedQuantitySet};
use crate::strata::{CensusTable, TimeCategoryScheme, YearGrid};

const D_LEN: usize = 6;
const TSS_LEN: usize = 6;
const AAFU_LEN: usize = 9;

/// Normal priors on regression and bias terms, symmetric Dirichlet priors on
/// the history simplexes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub normal_variance: f64,
    pub dirichlet_alpha: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec { normal_variance: 100.0, dirichlet_alpha: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub structure: BiasStructure,
    pub composition: BiasComposition,
    pub priors: PriorSpec,
    pub grid: YearGrid,
    /// Half-width of the uniform box starting values are drawn from, on the
    /// logit scale.
    pub init_spread: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            structure: BiasStructure::B5,
            composition: BiasComposition::MixThenBias,
            priors: PriorSpec::default(),
            grid: YearGrid::default(),
            init_spread: 2.0,
        }
    }
}

#[derive(Clone, Debug)]
struct CompiledBinomial {
    target: Target,
    y: u64,
    n: u64,
    ln_coef: f64,
    bias_slot: Option<usize>,
    source: usize,
    id: String,
}

#[derive(Clone, Debug)]
struct CompiledMultinomial {
    target: HistoryTarget,
    counts: Vec<u64>,
    ln_coef: f64,
    source: usize,
    id: String,
}

/// Model predictions at one parameter point.
#[derive(Clone, Debug)]
pub struct Predictions {
    pub quantities: StratifiedQuantitySet<f64>,
    pub binomial: Vec<f64>,
    pub multinomial: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct EvidenceModel {
    census: CensusTable,
    config: ModelConfig,
    bias_keys: Vec<BiasKey>,
    sources: Vec<String>,
    binomial: Vec<CompiledBinomial>,
    multinomial: Vec<CompiledMultinomial>,
}

/// Per-chain cache of the two most recent history evaluations, so that a
/// rejected history proposal does not force a recomputation.
#[derive(Default)]
pub struct ModelScratch {
    slots: [Option<(Vec<f64>, HistoryCache<f64>)>; 2],
    next: usize,
}

impl EvidenceModel {
    pub fn new(obs: &ObservationSet, census: CensusTable, config: ModelConfig) -> Result<Self> {
        let bias_keys = config.structure.required_keys(obs);
        let mut sources: Vec<String> = obs
            .binomial
            .iter()
            .map(|o| o.source_id.clone())
            .chain(obs.multinomial.iter().map(|o| o.source_id.clone()))
            .collect();
        sources.sort();
        sources.dedup();
        let src = |s: &str| sources.iter().position(|x| x == s).expect("source collected above");
        let binomial = obs
            .binomial
            .iter()
            .map(|o| CompiledBinomial {
                target: o.target.clone(),
                y: o.y,
                n: o.n,
                ln_coef: ln_binomial_coefficient(o.n, o.y),
                bias_slot: config.structure.key_for(o).map(|k| bias_keys.iter().position(|b| *b == k).expect("key listed")),
                source: src(&o.source_id),
                id: o.id(),
            })
            .collect();
        let multinomial = obs
            .multinomial
            .iter()
            .map(|o| CompiledMultinomial {
                target: o.target,
                counts: o.counts.clone(),
                ln_coef: ln_multinomial_coefficient(&o.counts),
                source: src(&o.source_id),
                id: o.id(),
            })
            .collect();
        Ok(EvidenceModel { census, config, bias_keys, sources, binomial, multinomial })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn census(&self) -> &CensusTable {
        &self.census
    }

    pub fn bias_keys(&self) -> &[BiasKey] {
        &self.bias_keys
    }

    /// Sources that contribute at least one observation, sorted.
    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    fn bias_offset(&self) -> usize {
        REGRESSION_DIM
    }

    fn history_offset(&self) -> usize {
        REGRESSION_DIM + self.bias_keys.len()
    }

    pub fn dimension(&self) -> usize {
        self.history_offset() + D_LEN + TSS_LEN + AAFU_LEN
    }

    fn history_coords<'x>(&self, x: &'x [f64]) -> &'x [f64] {
        &x[self.history_offset()..]
    }

    fn history_from_coords(&self, h: &[f64]) -> Result<DrugHistory<f64>> {
        DrugHistory::new(
            alr_to_simplex(&h[..D_LEN]),
            alr_to_simplex(&h[D_LEN..D_LEN + TSS_LEN]),
            alr_to_simplex(&h[D_LEN + TSS_LEN..]),
            self.config.grid,
        )
    }

    /// Splits a coordinate vector into parameters.
    pub fn decode(&self, x: &[f64]) -> Result<(RegressionParams<f64>, BiasParams<f64>, DrugHistory<f64>)> {
        if x.len() != self.dimension() {
            return Err(Error::LengthMismatch { expected: self.dimension(), got: x.len() });
        }
        let reg = RegressionParams::from_slice(&x[..REGRESSION_DIM])?;
        let bias = BiasParams::new(
            self.bias_keys.iter().cloned().zip(x[self.bias_offset()..self.history_offset()].iter().copied()).collect(),
        );
        Ok((reg, bias, self.history_from_coords(self.history_coords(x))?))
    }

    /// Inverse of [`decode`](Self::decode). Bias terms missing from `bias`
    /// start at zero.
    pub fn encode(&self, reg: &RegressionParams<f64>, bias: &BiasParams<f64>, history: &DrugHistory<f64>) -> Result<Vec<f64>> {
        let mut x = reg.to_vec();
        x.extend(self.bias_keys.iter().map(|k| bias.get(k).unwrap_or(0.0)));
        x.extend(simplex_to_alr(history.duration())?);
        x.extend(simplex_to_alr(history.tss())?);
        x.extend(simplex_to_alr(history.aafu())?);
        Ok(x)
    }

    fn cache<'s>(&self, x: &[f64], scratch: &'s mut ModelScratch) -> Result<&'s HistoryCache<f64>> {
        let h = self.history_coords(x);
        if let Some(i) = scratch.slots.iter().position(|s| s.as_ref().is_some_and(|(c, _)| c.as_slice() == h)) {
            return Ok(&scratch.slots[i].as_ref().expect("found").1);
        }
        let cache = HistoryCache::new(self.history_from_coords(h)?)?;
        let i = scratch.next;
        scratch.next = 1 - i;
        scratch.slots[i] = Some((h.to_vec(), cache));
        Ok(&scratch.slots[i].as_ref().expect("just stored").1)
    }

    pub fn predictions(&self, x: &[f64], scratch: &mut ModelScratch) -> Result<Predictions> {
        let reg = RegressionParams::from_slice(&x[..REGRESSION_DIM])?;
        let betas = &x[self.bias_offset()..self.history_offset()];
        let cache = self.cache(x, scratch)?;
        let qs = StratifiedQuantitySet::from_params(&reg, cache, &self.census)?;
        let binomial = self
            .binomial
            .iter()
            .map(|o| match o.bias_slot {
                None => o.target.value(&qs, &self.census),
                Some(k) => match self.config.composition {
                    BiasComposition::MixThenBias => apply_bias(o.target.value(&qs, &self.census), betas[k]),
                    BiasComposition::BiasThenMix => o
                        .target
                        .components(&qs, &self.census)
                        .into_iter()
                        .map(|(w, v)| w * apply_bias(v, betas[k]))
                        .sum(),
                },
            })
            .collect();
        let multinomial = self
            .multinomial
            .iter()
            .map(|o| o.target.predicted(&qs, cache, &self.census))
            .collect::<Result<Vec<_>>>()?;
        Ok(Predictions { quantities: qs, binomial, multinomial })
    }

    /// Log prior density including the change-of-variables terms.
    pub fn log_prior(&self, x: &[f64]) -> f64 {
        let v = self.config.priors.normal_variance;
        let normal: f64 = x[..self.history_offset()]
            .iter()
            .map(|&t| -0.5 * (2.0 * PI * v).ln() - t * t / (2.0 * v))
            .sum();
        let a = self.config.priors.dirichlet_alpha;
        let h = self.history_coords(x);
        let mut dir = 0.0;
        for coords in [&h[..D_LEN], &h[D_LEN..D_LEN + TSS_LEN], &h[D_LEN + TSS_LEN..]] {
            let k = coords.len() as f64 + 1.0;
            // alpha sum ln p: (alpha - 1) from the density, 1 from the Jacobian
            dir += ln_gamma(k * a) - k * ln_gamma(a) + a * alr_log_jacobian(coords);
        }
        normal + dir
    }

    /// Log-likelihood with binomial and multinomial coefficients.
    pub fn log_likelihood(&self, pred: &Predictions) -> Result<f64> {
        let mut ll = 0.0;
        for (o, &p) in self.binomial.iter().zip(&pred.binomial) {
            let l = loglik_binomial_kernel(o.y, o.n, p);
            if l == f64::NEG_INFINITY {
                return Err(Error::ImpossibleData(o.id.clone()));
            }
            ll += o.ln_coef + l;
        }
        for (o, p) in self.multinomial.iter().zip(&pred.multinomial) {
            let l = loglik_multinomial_kernel(&o.counts, p);
            if l == f64::NEG_INFINITY {
                return Err(Error::ImpossibleData(o.id.clone()));
            }
            ll += o.ln_coef + l;
        }
        Ok(ll)
    }

    pub fn log_posterior(&self, x: &[f64], scratch: &mut ModelScratch) -> Result<f64> {
        if x.len() != self.dimension() {
            return Err(Error::LengthMismatch { expected: self.dimension(), got: x.len() });
        }
        let pred = self.predictions(x, scratch)?;
        Ok(self.log_likelihood(&pred)? + self.log_prior(x))
    }

    /// Deviance contributed by each source, in [`sources`](Self::sources)
    /// order.
    pub fn source_deviance(&self, pred: &Predictions) -> Vec<f64> {
        let mut d = vec![0.0; self.sources.len()];
        for (o, &p) in self.binomial.iter().zip(&pred.binomial) {
            d[o.source] += deviance_binomial_term(o.y, o.n, p);
        }
        for (o, p) in self.multinomial.iter().zip(&pred.multinomial) {
            d[o.source] += deviance_multinomial(&o.counts, p);
        }
        d
    }
}

impl LogDensity for EvidenceModel {
    type Scratch = ModelScratch;

    fn dim(&self) -> usize {
        self.dimension()
    }

    fn scratch(&self) -> ModelScratch {
        ModelScratch::default()
    }

    fn log_density(&self, x: &[f64], scratch: &mut ModelScratch) -> f64 {
        self.log_posterior(x, scratch).unwrap_or(f64::NEG_INFINITY)
    }

    fn initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = self.config.init_spread;
        let mut x: Vec<f64> = (0..self.history_offset()).map(|_| rng.random_range(-s..s)).collect();
        // Keep the ever-injecting proportion well below one half at the
        // start so early history moves are not swamped.
        x[0] -= 2.0 * s;
        x.extend((0..D_LEN + TSS_LEN + AAFU_LEN).map(|_| rng.sample::<f64, _>(StandardNormal)));
        x
    }

    fn groups(&self) -> Vec<(String, Vec<usize>)> {
        let b = self.bias_offset();
        let h = self.history_offset();
        let mut g = vec![
            ("alpha".to_string(), (0..4).collect::<Vec<_>>()),
            ("gamma".to_string(), (4..8).collect()),
            ("delta".to_string(), (8..REGRESSION_DIM).collect()),
        ];
        if h > b {
            g.push(("beta".to_string(), (b..h).collect()));
        }
        g.push(("history.d".to_string(), (h..h + D_LEN).collect()));
        g.push(("history.tss".to_string(), (h + D_LEN..h + D_LEN + TSS_LEN).collect()));
        g.push(("history.aafu".to_string(), (h + D_LEN + TSS_LEN..self.dimension()).collect()));
        g
    }

    fn coordinate_names(&self) -> Vec<String> {
        let mut n = RegressionParams::<f64>::names();
        n.extend(self.bias_keys.iter().map(|k| format!("beta.{k}")));
        n.extend((0..D_LEN).map(|i| format!("alr.d.{}", TimeCategoryScheme::DURATION.label(i))));
        n.extend((0..TSS_LEN).map(|i| format!("alr.tss.{}", TimeCategoryScheme::TSS.label(i))));
        n.extend((0..AAFU_LEN).map(|i| format!("alr.aafu.{}", TimeCategoryScheme::AAFU.label(i))));
        n
    }

    fn tracked_names(&self) -> Vec<String> {
        let mut n = tracked_names();
        n.extend(self.bias_keys.iter().map(|k| format!("beta.{k}")));
        n.extend(self.sources.iter().map(|s| format!("deviance.{s}")));
        n.push("deviance.model".into());
        n
    }

    fn tracked(&self, x: &[f64], scratch: &mut ModelScratch) -> Vec<f64> {
        let width = self.tracked_names().len();
        let Ok(pred) = self.predictions(x, scratch) else {
            return vec![f64::NAN; width];
        };
        let mut v = pred.quantities.tracked_values();
        v.extend_from_slice(&x[self.bias_offset()..self.history_offset()]);
        let dev = self.source_deviance(&pred);
        let total = dev.iter().sum();
        v.extend(dev);
        v.push(total);
        v
    }
}

/// Summary and retained draws of one fit.
#[derive(Clone, Debug)]
pub struct FitOutput {
    pub summary: PosteriorSummary,
    pub run: RunOutput,
}

/// Samples the posterior and summarises it. The caller is responsible for
/// the identifiability guard.
pub fn fit(model: &EvidenceModel, config: &SamplerConfig) -> Result<FitOutput> {
    let run = run(model, config)?;
    Ok(FitOutput { summary: PosteriorSummary::from_run(&run, config), run })
}

/// `invlogit` of a standard-normal-prior draw scaled by the prior sd; used
/// in prior sanity checks.
pub fn prior_predictive_logistic(rng: &mut ChaCha8Rng, variance: f64) -> f64 {
    inv_logit(variance.sqrt() * rng.sample::<f64, _>(StandardNormal))
}
