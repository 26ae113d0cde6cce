//! Standardised deviance and the model-comparison procedures built on it.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{fit, EvidenceModel, FitOutput, ModelConfig, PosteriorSummary, QuantitySummary, RunOutput, SamplerConfig, RHAT_THRESHOLD};
use crate::num::{lit, stable_sum, xlogx_over, Scalar};
use crate::observation::{BiasStructure, ObservationSet};
use crate::quantities::tracked_names;
use crate::strata::{AgeGroup, CensusTable};

/// One binomial deviance term
/// `2 [y ln(y / (n p)) + (n - y) ln((n - y) / (n - n p))]`, using
/// `0 ln 0 = 0`. Infinite when `p` rules out the data.
pub fn deviance_binomial_term<T: Scalar>(y: u64, n: u64, p: T) -> T {
    let (yf, nf) = (lit::<T>(y as f64), lit::<T>(n as f64));
    let two = lit::<T>(2.0);
    let np = nf * p;
    let d = two * (xlogx_over(yf, np) + xlogx_over(nf - yf, nf - np));
    if d.is_nan() {
        T::infinity()
    } else {
        d.max(T::zero())
    }
}

/// Sum of binomial deviance terms over `(y, n, p)` triples.
pub fn deviance_binomial<T: Scalar>(terms: &[(u64, u64, T)]) -> T {
    terms.iter().fold(T::zero(), |acc, &(y, n, p)| acc + deviance_binomial_term(y, n, p))
}

/// `2 sum_t z_t ln(z_t / zhat_t)` with `zhat_t = N p_t`.
pub fn deviance_multinomial<T: Scalar>(counts: &[u64], probs: &[T]) -> T {
    let total: u64 = counts.iter().sum();
    let nf = lit::<T>(total as f64);
    let two = lit::<T>(2.0);
    let mut d = T::zero();
    for (&z, &p) in counts.iter().zip(probs) {
        if z == 0 {
            continue;
        }
        if !(p > T::zero()) {
            return T::infinity();
        }
        d = d + xlogx_over(lit::<T>(z as f64), nf * p);
    }
    (two * d).max(T::zero())
}

/// Sources treated as biased in the source-and-group structure whose
/// deviance forms the `b -> ub` part of the decomposition.
pub const REFERENCE_SOURCES: [&str; 6] = ["CHC", "JAILS", "STD", "HONE", "NHBS", "RISK"];

/// Headline quantities reported per sweep variant and per CV removal.
pub const KEY_QUANTITIES: [&str; 6] = ["rho.cur", "rho.ex", "pi.cur", "pi.ex", "pi.non", "pi"];

/// Names making up a key quantity's family: the aggregate plus its age
/// strata.
pub fn family_names(key: &str) -> Vec<String> {
    let stem = if key == "pi" { "pi.age".to_string() } else { key.to_string() };
    std::iter::once(key.to_string()).chain(AgeGroup::ALL.iter().map(|a| format!("{stem}.{a}"))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevianceReport {
    pub per_source: BTreeMap<String, f64>,
    pub model: f64,
    pub unbiased: f64,
    pub biased_to_unbiased: f64,
    pub reference: Vec<String>,
}

impl DevianceReport {
    /// Splits per-source deviances by membership in `reference`. The model
    /// total is the sum of the two parts.
    pub fn new<S: AsRef<str>>(per_source: BTreeMap<String, f64>, reference: &[S]) -> Self {
        let reference: Vec<String> = reference.iter().map(|s| s.as_ref().to_string()).collect();
        let (mut ub, mut b) = (Vec::new(), Vec::new());
        for (s, &d) in &per_source {
            if reference.contains(s) {
                b.push(d);
            } else {
                ub.push(d);
            }
        }
        let unbiased = stable_sum(ub);
        let biased_to_unbiased = stable_sum(b);
        DevianceReport { per_source, model: unbiased + biased_to_unbiased, unbiased, biased_to_unbiased, reference }
    }

    pub fn from_summary<S: AsRef<str>>(summary: &PosteriorSummary, reference: &[S]) -> Self {
        Self::new(summary.deviance.clone(), reference)
    }
}

/// Posterior mean of each `deviance.<source>` trace of a run.
pub fn posterior_mean_deviance<S: AsRef<str>>(run: &RunOutput, reference: &[S]) -> DevianceReport {
    let per_source = run
        .names
        .iter()
        .enumerate()
        .filter_map(|(j, name)| {
            let src = name.strip_prefix("deviance.")?;
            if src == "model" {
                return None;
            }
            let draws: Vec<f64> = run.columns(j).into_iter().flatten().collect();
            Some((src.to_string(), { let n = draws.len() as f64; stable_sum(draws) / n }))
        })
        .collect();
    DevianceReport::new(per_source, reference)
}

/// Shared settings of the sweep and cross-validation refits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefitConfig {
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub reference: Vec<String>,
}

impl Default for RefitConfig {
    fn default() -> Self {
        RefitConfig {
            model: ModelConfig::default(),
            sampler: SamplerConfig { iterations: 6000, ..SamplerConfig::default() },
            reference: REFERENCE_SOURCES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub structure: BiasStructure,
    pub deviance: Option<DevianceReport>,
    /// Monte Carlo standard error of the model deviance.
    pub model_mcse: Option<f64>,
    pub converged: bool,
    pub quantities: Vec<QuantitySummary>,
    /// Key quantities whose family failed to converge.
    pub unconverged: Vec<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn row(&self, s: BiasStructure) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.structure == s)
    }

    fn fitted(&self) -> impl Iterator<Item = (&SweepRow, f64)> {
        self.rows.iter().filter_map(|r| r.deviance.as_ref().map(|d| (r, d.model)))
    }

    /// Variant with the smallest model deviance.
    pub fn best(&self) -> Option<BiasStructure> {
        self.fitted().min_by(|a, b| a.1.total_cmp(&b.1)).map(|(r, _)| r.structure)
    }

    pub fn worst(&self) -> Option<BiasStructure> {
        self.fitted().max_by(|a, b| a.1.total_cmp(&b.1)).map(|(r, _)| r.structure)
    }

    pub fn table(&self) -> String {
        let mut rows = vec![
            ["Model", "Dev.model", "Dev.ub", "Dev.b->ub"]
                .into_iter()
                .map(String::from)
                .chain(KEY_QUANTITIES.iter().map(|s| s.to_string()))
                .collect::<Vec<_>>(),
        ];
        for r in &self.rows {
            let mut line = vec![r.structure.to_string()];
            match (&r.deviance, &r.error) {
                (Some(d), _) => {
                    line.extend([d.model, d.unbiased, d.biased_to_unbiased].map(|v| format!("{v:.1}")));
                    line.extend(KEY_QUANTITIES.iter().map(|k| cell(&r.quantities, k, &r.unconverged)));
                }
                (None, e) => {
                    line.push(format!("error: {}", e.as_deref().unwrap_or("unknown")));
                }
            }
            rows.push(line);
        }
        align(&rows)
    }
}

fn refit(obs: &ObservationSet, census: &CensusTable, model: ModelConfig, sampler: &SamplerConfig) -> Result<FitOutput> {
    let m = EvidenceModel::new(obs, census.clone(), model)?;
    fit(&m, sampler)
}

fn key_summaries(summary: &PosteriorSummary) -> (Vec<QuantitySummary>, Vec<String>) {
    let q = KEY_QUANTITIES.iter().filter_map(|k| summary.get(k).cloned()).collect();
    let bad = KEY_QUANTITIES
        .iter()
        .filter(|k| !summary.all_converged(&family_names(k)))
        .map(|k| k.to_string())
        .collect();
    (q, bad)
}

/// Fits every bias structure to the same data with the same sampler
/// settings and seed. Variants failing the identifiability guard or the
/// fit are reported with an error instead of aborting the sweep.
pub fn bias_sweep(obs: &ObservationSet, census: &CensusTable, config: &RefitConfig) -> Result<SweepReport> {
    config.sampler.validate()?;
    let rows = BiasStructure::ALL
        .par_iter()
        .map(|&structure| {
            let failed = |e: Error| SweepRow {
                structure,
                deviance: None,
                model_mcse: None,
                converged: false,
                quantities: Vec::new(),
                unconverged: Vec::new(),
                error: Some(e.to_string()),
            };
            if let Err(e) = obs.check_identifiability(structure) {
                return failed(e);
            }
            match refit(obs, census, ModelConfig { structure, ..config.model }, &config.sampler) {
                Ok(out) => {
                    let (quantities, unconverged) = key_summaries(&out.summary);
                    SweepRow {
                        structure,
                        deviance: Some(DevianceReport::from_summary(&out.summary, &config.reference)),
                        model_mcse: out.summary.get("deviance.model").map(|q| q.mcse),
                        converged: out.summary.converged,
                        quantities,
                        unconverged,
                        error: None,
                    }
                }
                Err(e) => failed(e),
            }
        })
        .collect();
    Ok(SweepReport { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    /// `None` for the full model.
    pub removed: Option<String>,
    pub deviance: BTreeMap<String, f64>,
    pub deviance_mcse: BTreeMap<String, f64>,
    pub converged: bool,
    /// Summaries of every tracked prevalence and proportion.
    pub quantities: Vec<QuantitySummary>,
    pub unconverged: Vec<String>,
    pub error: Option<String>,
}

/// Source `source` fits better once `removed` is left out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub source: String,
    pub removed: String,
    pub full: f64,
    pub reduced: f64,
    /// The drop exceeds twice the combined Monte Carlo standard error.
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub sources: Vec<String>,
    pub rows: Vec<CvRow>,
    pub conflicts: Vec<Conflict>,
}

impl CvReport {
    pub fn full(&self) -> &CvRow {
        &self.rows[0]
    }

    pub fn row(&self, removed: &str) -> Option<&CvRow> {
        self.rows.iter().find(|r| r.removed.as_deref() == Some(removed))
    }

    /// Deviance matrix: removed source by remaining source.
    pub fn deviance_table(&self) -> String {
        let mut rows = vec![std::iter::once("Removed".to_string()).chain(self.sources.iter().cloned()).collect::<Vec<_>>()];
        for r in &self.rows {
            let mut line = vec![r.removed.clone().unwrap_or_else(|| "None".into())];
            for s in &self.sources {
                line.push(if r.removed.as_ref() == Some(s) {
                    "-".into()
                } else if r.error.is_some() {
                    "error".into()
                } else if !r.converged {
                    // Table convention: a star replaces values of fits that
                    // did not converge.
                    r.deviance.get(s).map_or("-".into(), |d| format!("{d:.1}*"))
                } else {
                    r.deviance.get(s).map_or("-".into(), |d| format!("{d:.1}"))
                });
            }
            rows.push(line);
        }
        align(&rows)
    }

    pub fn quantity_table(&self) -> String {
        let mut rows =
            vec![std::iter::once("Removed".to_string()).chain(KEY_QUANTITIES.iter().map(|s| s.to_string())).collect::<Vec<_>>()];
        for r in &self.rows {
            let mut line = vec![r.removed.clone().unwrap_or_else(|| "None".into())];
            match &r.error {
                Some(e) => line.push(format!("error: {e}")),
                None => line.extend(KEY_QUANTITIES.iter().map(|k| cell(&r.quantities, k, &r.unconverged))),
            }
            rows.push(line);
        }
        align(&rows)
    }
}

/// Leave-one-source-out cross-validation. The first row is the full model;
/// each further row refits without one source, with the identifiability
/// guard waived since losing a sole informant is the point of the exercise.
pub fn lodo_cv(obs: &ObservationSet, census: &CensusTable, config: &RefitConfig) -> Result<CvReport> {
    config.sampler.validate()?;
    let sources = obs.source_ids();
    if sources.len() < 2 {
        return Err(Error::Invalid("cross-validation needs at least two sources".into()));
    }
    let full = refit(obs, census, config.model, &config.sampler)?;
    let removals: Vec<String> = sources.clone();
    let mut rows = vec![cv_row(None, Ok(full))];
    rows.extend(removals.par_iter().map(|s| {
        let reduced = obs.without_source(s);
        cv_row(Some(s.clone()), refit(&reduced, census, config.model, &config.sampler))
    }).collect::<Vec<_>>());

    let base = &rows[0];
    let mut conflicts = Vec::new();
    for r in rows.iter().skip(1).filter(|r| r.error.is_none()) {
        let k = r.removed.clone().expect("reduced rows name their removal");
        for (j, &reduced) in &r.deviance {
            let (Some(&full), Some(&se0), Some(&se1)) = (base.deviance.get(j), base.deviance_mcse.get(j), r.deviance_mcse.get(j)) else {
                continue;
            };
            if reduced < full {
                conflicts.push(Conflict {
                    source: j.clone(),
                    removed: k.clone(),
                    full,
                    reduced,
                    significant: full - reduced > 2.0 * se0.hypot(se1),
                });
            }
        }
    }
    Ok(CvReport { sources, rows, conflicts })
}

fn cv_row(removed: Option<String>, out: Result<FitOutput>) -> CvRow {
    match out {
        Ok(out) => {
            let (_, unconverged) = key_summaries(&out.summary);
            let names = tracked_names();
            let quantities = out.summary.quantities.iter().filter(|q| names.contains(&q.name)).cloned().collect();
            let deviance_mcse = out
                .summary
                .quantities
                .iter()
                .filter_map(|q| q.name.strip_prefix("deviance.").filter(|s| *s != "model").map(|s| (s.to_string(), q.mcse)))
                .collect();
            CvRow {
                removed,
                deviance: out.summary.deviance.clone(),
                deviance_mcse,
                converged: out.summary.converged,
                quantities,
                unconverged,
                error: None,
            }
        }
        Err(e) => CvRow {
            removed,
            deviance: BTreeMap::new(),
            deviance_mcse: BTreeMap::new(),
            converged: false,
            quantities: Vec::new(),
            unconverged: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn thousands(v: f64) -> String {
    format!("{:.1}", v / 1000.0)
}

fn interval(q: &QuantitySummary, f: impl Fn(f64) -> String) -> String {
    format!("{} ({} - {})", f(q.mean), f(q.p2_5), f(q.p97_5))
}

fn cell(qs: &[QuantitySummary], name: &str, unconverged: &[String]) -> String {
    if unconverged.iter().any(|u| u == name) {
        return "*".into();
    }
    qs.iter().find(|q| q.name == name).map_or("-".into(), |q| interval(q, pct))
}

/// Left-aligned first column, right-aligned rest, two-space gutters.
fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (c, s) in r.iter().enumerate() {
            if c == 0 {
                line.push_str(&format!("{s:<w$}", w = width[0]));
            } else {
                line.push_str(&format!("  {s:>w$}", w = width[c]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Population, proportion and prevalence tables of a fit: percentages with
/// two decimals and counts in thousands, each with its 95% interval.
pub fn fit_tables(summary: &PosteriorSummary, census: &CensusTable) -> String {
    let total = census.total();
    let get = |name: &str| summary.get(name);
    let both = |name: &str, n: f64| match get(name) {
        Some(q) if !q.converged => ["*".to_string(), "*".to_string()],
        Some(q) => [interval(q, pct), interval(q, |v| thousands(v * n))],
        None => ["-".to_string(), "-".to_string()],
    };
    let mut out = String::new();

    out.push_str("Injecting drug use proportions (% and thousands)\n");
    let mut rows = vec![["Age", "Population", "cur %", "cur k", "ex %", "ex k", "ever %", "ever k"].map(String::from).to_vec()];
    let mut line = |label: String, n: f64, names: [String; 3]| {
        let mut l = vec![label, thousands(n)];
        for name in names {
            l.extend(both(&name, n));
        }
        rows.push(l);
    };
    for a in AgeGroup::ALL {
        let n = census.population(a);
        line(a.to_string(), n, ["cur", "ex", "ever"].map(|g| format!("rho.{g}.{a}")));
    }
    line("Total".into(), total, ["cur", "ex", "ever"].map(|g| format!("rho.{g}")));
    out.push_str(&align(&rows));

    out.push_str("\nHCV prevalence by group (rho*pi as % and thousands; pi as %)\n");
    let mut rows = vec![
        ["Age", "cur rho*pi", "cur k", "ex rho*pi", "ex k", "non rho*pi", "non k", "pi.cur", "pi.ex", "pi.non"]
            .map(String::from)
            .to_vec(),
    ];
    for a in AgeGroup::ALL {
        let n = census.population(a);
        let mut l = vec![a.to_string()];
        for g in ["cur", "ex", "non"] {
            l.extend(both(&format!("rhopi.{g}.{a}"), n));
        }
        for g in ["cur", "ex", "non"] {
            l.push(both(&format!("pi.{g}.{a}"), n)[0].clone());
        }
        rows.push(l);
    }
    let mut l = vec!["Total".to_string()];
    for g in ["cur", "ex", "non"] {
        let v = AgeGroup::ALL
            .iter()
            .map(|a| get(&format!("rhopi.{g}.{a}")).map_or(f64::NAN, |q| q.mean * census.population(*a)))
            .sum::<f64>()
            / total;
        l.extend([pct(v), thousands(v * total)]);
    }
    for g in ["cur", "ex", "non"] {
        l.push(both(&format!("pi.{g}"), total)[0].clone());
    }
    rows.push(l);
    out.push_str(&align(&rows));

    out.push_str("\nHCV prevalence by age (% and thousands)\n");
    let mut rows = vec![["Age", "pi %", "infected k"].map(String::from).to_vec()];
    for a in AgeGroup::ALL {
        let mut l = vec![a.to_string()];
        l.extend(both(&format!("pi.age.{a}"), census.population(a)));
        rows.push(l);
    }
    let mut l = vec!["Total".to_string()];
    l.extend(both("pi", total));
    rows.push(l);
    out.push_str(&align(&rows));

    if !summary.deviance.is_empty() {
        out.push_str("\nPosterior mean deviance by source\n");
        let mut rows = vec![["Source", "deviance", "mcse"].map(String::from).to_vec()];
        for (s, d) in &summary.deviance {
            let se = get(&format!("deviance.{s}")).map_or(f64::NAN, |q| q.mcse);
            rows.push(vec![s.clone(), format!("{d:.1}"), format!("{se:.2}")]);
        }
        rows.push(vec!["Total".into(), format!("{:.1}", summary.model_deviance()), String::new()]);
        out.push_str(&align(&rows));
    }
    out.push_str(&format!(
        "\nconverged: {} (R-hat < {RHAT_THRESHOLD}); chains {}, iterations {}, burn-in {}, seed {}\n",
        summary.converged, summary.chains, summary.iterations, summary.burn_in, summary.seed
    ));
    out
}
