//! Data sources, the quantities they inform, logit-scale bias terms and
//! likelihood contributions.
//!
//! A binomial observation informs a single lattice quantity, a census-weighted
//! mixture of them, or one ever-injector prevalence cell. Biased observations
//! see `invlogit(logit(q) + beta)` where the key of `beta` is chosen by the
//! active [`BiasStructure`]. Multinomial observations inform a drug-use-history
//! distribution and are never biased.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::history::HistoryCache;
use crate::num::{inv_logit, lit, logit, stable_sum, Scalar};
use crate::params::DrugHistory;
use crate::quantities::StratifiedQuantitySet;
use crate::strata::{AgeGroup, CensusTable, RiskGroup, SchemeKind, TimeCategoryScheme, AGE_GROUPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Proportion of the age band in the group.
    Rho,
    /// Prevalence within the group.
    Pi,
}

impl Measure {
    fn prefix(self) -> &'static str {
        match self {
            Measure::Rho => "rho",
            Measure::Pi => "pi",
        }
    }
}

/// What a binomial observation measures.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    /// A lattice quantity or, with several groups or ages, their mixture.
    /// Proportions sum over groups and average over ages with census weights;
    /// prevalences average over `(group, age)` with weights `N_a rho_{g,a}`.
    Lattice { measure: Measure, groups: Vec<RiskGroup>, ages: Vec<AgeGroup> },
    /// Ever-injector prevalence in one `(duration, tss)` cell.
    EverCell { age: AgeGroup, d_cat: usize, tss_cat: usize },
}

impl Target {
    pub fn single(measure: Measure, group: RiskGroup, age: AgeGroup) -> Self {
        Target::Lattice { measure, groups: vec![group], ages: vec![age] }
    }

    /// Current-injector prevalence at one time-since-start category, which is
    /// the `d = tss` diagonal of the ever-injector cells.
    pub fn current_at_tss(age: AgeGroup, tss_cat: usize) -> Self {
        Target::EverCell { age, d_cat: tss_cat, tss_cat }
    }

    /// Distinct population strata covered, with `Ever` expanded.
    pub fn strata(&self) -> BTreeSet<RiskGroup> {
        match self {
            Target::Lattice { groups, .. } => groups.iter().flat_map(|g| g.strata().iter().copied()).collect(),
            // The diagonal is the current-injector cell, anything below it
            // has stopped.
            Target::EverCell { d_cat, tss_cat, .. } if d_cat == tss_cat => [RiskGroup::Current].into(),
            Target::EverCell { .. } => [RiskGroup::Ex].into(),
        }
    }

    /// Group label used to key bias terms: the single stratum covered, or
    /// `Ever` for current plus ex.
    pub fn key_group(&self) -> Option<RiskGroup> {
        let s: Vec<_> = self.strata().into_iter().collect();
        match s.as_slice() {
            [g] => Some(*g),
            [RiskGroup::Current, RiskGroup::Ex] => Some(RiskGroup::Ever),
            _ => None,
        }
    }

    pub fn ages(&self) -> Vec<AgeGroup> {
        match self {
            Target::Lattice { ages, .. } => ages.clone(),
            Target::EverCell { age, .. } => vec![*age],
        }
    }

    pub fn is_mixture(&self) -> bool {
        matches!(self, Target::Lattice { groups, ages, .. } if groups.len() > 1 || ages.len() > 1)
    }

    fn validate(&self) -> Result<()> {
        match self {
            Target::Lattice { groups, ages, .. } => {
                if groups.is_empty() || ages.is_empty() {
                    return Err(Error::UnresolvableTarget("empty mixture".into()));
                }
                let n: usize = groups.iter().map(|g| g.strata().len()).sum();
                if n != self.strata().len() {
                    return Err(Error::UnresolvableTarget("mixture components overlap".into()));
                }
                let distinct: BTreeSet<_> = ages.iter().collect();
                if distinct.len() != ages.len() {
                    return Err(Error::UnresolvableTarget("repeated age group".into()));
                }
                Ok(())
            }
            Target::EverCell { d_cat, tss_cat, .. } => {
                TimeCategoryScheme::DURATION.bounds(*d_cat)?;
                TimeCategoryScheme::TSS.bounds(*tss_cat)?;
                Ok(())
            }
        }
    }

    /// Unbiased value of the target.
    pub fn value<T: Scalar>(&self, qs: &StratifiedQuantitySet<T>, census: &CensusTable) -> T {
        match self {
            Target::EverCell { age, d_cat, tss_cat } => qs.pi_ever_cell(*d_cat, *tss_cat, *age),
            Target::Lattice { measure, groups, ages } => {
                if groups.len() == 1 && ages.len() == 1 {
                    return match measure {
                        Measure::Rho => qs.rho(groups[0], ages[0]),
                        Measure::Pi => qs.pi(groups[0], ages[0]),
                    };
                }
                let comps = self.components(qs, census);
                stable_sum(comps.iter().map(|&(w, v)| w * v))
            }
        }
    }

    /// Mixture weights and component values.
    pub fn components<T: Scalar>(&self, qs: &StratifiedQuantitySet<T>, census: &CensusTable) -> Vec<(T, T)> {
        match self {
            Target::EverCell { .. } => vec![(T::one(), self.value(qs, census))],
            Target::Lattice { measure: Measure::Rho, groups, ages } => {
                let total = stable_sum(ages.iter().map(|&a| lit::<T>(census.population(a))));
                let mut out = Vec::new();
                for &a in ages {
                    let w = lit::<T>(census.population(a)) / total;
                    for &g in groups {
                        out.push((w, qs.rho(g, a)));
                    }
                }
                out
            }
            Target::Lattice { measure: Measure::Pi, groups, ages } => {
                let mut raw = Vec::new();
                for &a in ages {
                    for g in groups.iter().flat_map(|g| g.strata().iter().copied()) {
                        raw.push((lit::<T>(census.population(a)) * qs.rho(g, a), qs.pi(g, a)));
                    }
                }
                let total = stable_sum(raw.iter().map(|r| r.0));
                raw.into_iter().map(|(w, v)| (w / total, v)).collect()
            }
        }
    }

    /// Kind label as used in the observation CSV.
    pub fn kind_label(&self) -> String {
        match self {
            Target::EverCell { d_cat, tss_cat, .. } if d_cat == tss_cat => "pi_cur_tss".into(),
            Target::EverCell { .. } => "pi_ever_cell".into(),
            Target::Lattice { measure, groups, .. } => groups
                .iter()
                .map(|g| format!("{}_{}", measure.prefix(), g.short()))
                .collect::<Vec<_>>()
                .join("+"),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::EverCell { age, d_cat, tss_cat } => write!(
                f,
                "{}[{age}; d {}; tss {}]",
                self.kind_label(),
                TimeCategoryScheme::DURATION.label(*d_cat),
                TimeCategoryScheme::TSS.label(*tss_cat)
            ),
            Target::Lattice { ages, .. } => write!(f, "{}[{}]", self.kind_label(), AgeGroup::range_label(ages)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BiasFlag {
    #[default]
    Unbiased,
    Biased,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinomialObservation {
    pub source_id: String,
    pub target: Target,
    pub y: u64,
    pub n: u64,
    pub bias_flag: BiasFlag,
    /// CSV line the record came from, 0 if built in code.
    pub line: usize,
}

impl BinomialObservation {
    pub fn new(source_id: impl Into<String>, target: Target, y: u64, n: u64, bias_flag: BiasFlag) -> Result<Self> {
        let o = BinomialObservation { source_id: source_id.into(), target, y, n, bias_flag, line: 0 };
        o.validate()?;
        Ok(o)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("n must be positive".into()));
        }
        if self.y > self.n {
            return Err(Error::Invalid(format!("y = {} exceeds n = {}", self.y, self.n)));
        }
        self.target.validate()?;
        if self.bias_flag == BiasFlag::Biased && self.target.key_group().is_none() {
            return Err(Error::UnresolvableTarget(format!(
                "biased mixture {} spans several risk groups",
                self.target
            )));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        format!("{}:{}", self.source_id, self.target)
    }
}

/// Drug-use-history distribution informed by a multinomial count vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HistoryTarget {
    pub variable: SchemeKind,
    /// `Ever`, `Current` or `Ex`.
    pub status: RiskGroup,
    /// Age band the counts come from; `None` pools all four bands.
    pub age: Option<AgeGroup>,
}

impl HistoryTarget {
    pub fn new(variable: SchemeKind, status: RiskGroup, age: Option<AgeGroup>) -> Result<Self> {
        let ok = match status {
            RiskGroup::Ever => true,
            RiskGroup::Ex => true,
            RiskGroup::Current => variable != SchemeKind::Duration,
            RiskGroup::Non => false,
        };
        if !ok {
            return Err(Error::UnresolvableTarget(format!("no {variable:?} distribution for {status}")));
        }
        Ok(HistoryTarget { variable, status, age })
    }

    pub fn scheme(&self) -> TimeCategoryScheme {
        TimeCategoryScheme::of(self.variable)
    }

    pub fn kind_label(&self) -> String {
        let v = match self.variable {
            SchemeKind::Duration => "d",
            SchemeKind::Tss => "tss",
            SchemeKind::Aafu => "aafu",
        };
        format!("f_{v}_{}", self.status.short())
    }

    fn band_simplex<T: Scalar>(&self, cache: &HistoryCache<T>, a: AgeGroup) -> Result<Vec<T>> {
        let b = cache.band(a);
        let degenerate = || Error::DegenerateStratum(format!("{} undefined at age {a}", self.kind_label()));
        Ok(match (self.variable, self.status) {
            (SchemeKind::Duration, RiskGroup::Ever) => cache.history().duration().to_vec(),
            (SchemeKind::Tss, RiskGroup::Ever) => b.ever_tss.to_vec(),
            (SchemeKind::Aafu, RiskGroup::Ever) => b.ever_aafu.to_vec(),
            (SchemeKind::Duration, RiskGroup::Ex) => b.ex_duration().ok_or_else(degenerate)?.to_vec(),
            (SchemeKind::Tss, RiskGroup::Ex) => b.ex_tss().ok_or_else(degenerate)?.to_vec(),
            (SchemeKind::Aafu, RiskGroup::Ex) => b.ex_aafu.ok_or_else(degenerate)?.to_vec(),
            (SchemeKind::Tss, RiskGroup::Current) => b.current_tss.ok_or_else(degenerate)?.to_vec(),
            (SchemeKind::Aafu, RiskGroup::Current) => b.current_aafu.ok_or_else(degenerate)?.to_vec(),
            _ => return Err(Error::UnresolvableTarget(self.kind_label())),
        })
    }

    /// Category probabilities predicted by the model.
    pub fn predicted<T: Scalar>(
        &self,
        qs: &StratifiedQuantitySet<T>,
        cache: &HistoryCache<T>,
        census: &CensusTable,
    ) -> Result<Vec<T>> {
        if let Some(a) = self.age {
            return self.band_simplex(cache, a);
        }
        if self.status == RiskGroup::Ever {
            let h: &DrugHistory<T> = cache.history();
            return Ok(match self.variable {
                SchemeKind::Duration => h.duration().to_vec(),
                SchemeKind::Tss => h.tss().to_vec(),
                SchemeKind::Aafu => h.aafu().to_vec(),
            });
        }
        // Pool bands with weights N_a rho_{g,a}.
        let k = self.scheme().len();
        let mut out = vec![T::zero(); k];
        let mut total = T::zero();
        for a in AgeGroup::ALL {
            let w = lit::<T>(census.population(a)) * qs.rho(self.status, a);
            if w == T::zero() {
                continue;
            }
            let s = self.band_simplex(cache, a)?;
            for (o, v) in out.iter_mut().zip(s) {
                *o = *o + w * v;
            }
            total = total + w;
        }
        Ok(out.into_iter().map(|v| v / total).collect())
    }
}

impl fmt::Display for HistoryTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.age {
            Some(a) => write!(f, "{}[{a}]", self.kind_label()),
            None => write!(f, "{}[pooled]", self.kind_label()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultinomialObservation {
    pub source_id: String,
    pub target: HistoryTarget,
    pub counts: Vec<u64>,
    pub line: usize,
}

impl MultinomialObservation {
    pub fn new(source_id: impl Into<String>, target: HistoryTarget, counts: Vec<u64>) -> Result<Self> {
        let len = target.scheme().len();
        if counts.len() != len {
            return Err(Error::LengthMismatch { expected: len, got: counts.len() });
        }
        Ok(MultinomialObservation { source_id: source_id.into(), target, counts, line: 0 })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn id(&self) -> String {
        format!("{}:{}", self.source_id, self.target)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GeographicLevel {
    #[default]
    City,
    Metro,
    National,
}

/// Source metadata, including level-adjustment multipliers for sources that
/// do not report at city level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct SourceMeta {
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub level: GeographicLevel,
    /// Keyed by risk-group label (`cur`, `ex`, `non`, `ever`).
    #[serde(default)]
    pub group_multipliers: BTreeMap<String, f64>,
    /// Keyed by age band label, e.g. `"30-39"`.
    #[serde(default)]
    pub age_multipliers: BTreeMap<String, f64>,
}

impl SourceMeta {
    pub fn city(id: impl Into<String>) -> Self {
        SourceMeta { id: id.into(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let has = !self.group_multipliers.is_empty() || !self.age_multipliers.is_empty();
        if (self.level == GeographicLevel::City) == has {
            return Err(Error::Invalid(format!(
                "source {}: multipliers must be given exactly when the level is not city",
                self.id
            )));
        }
        for (k, &m) in self.group_multipliers.iter().chain(&self.age_multipliers) {
            if !(m > 0.0 && m <= 1.0) {
                return Err(Error::Invalid(format!("source {}: multiplier {k} = {m} outside (0, 1]", self.id)));
            }
        }
        for k in self.group_multipliers.keys() {
            k.parse::<RiskGroup>()?;
        }
        for k in self.age_multipliers.keys() {
            k.parse::<AgeGroup>()?;
        }
        Ok(())
    }

    pub fn group_multiplier(&self, g: RiskGroup) -> f64 {
        self.group_multipliers
            .iter()
            .find(|(k, _)| k.parse::<RiskGroup>().ok() == Some(g))
            .map_or(1.0, |(_, &m)| m)
    }

    pub fn age_multiplier(&self, a: AgeGroup) -> f64 {
        self.age_multipliers
            .iter()
            .find(|(k, _)| k.parse::<AgeGroup>().ok() == Some(a))
            .map_or(1.0, |(_, &m)| m)
    }
}

/// Scales a non-city estimate to city level. `age` is `None` for targets
/// spanning several bands, which take no age multiplier.
pub fn apply_level_multipliers(estimate: f64, meta: &SourceMeta, group: RiskGroup, age: Option<AgeGroup>) -> Result<f64> {
    let v = estimate * meta.group_multiplier(group) * age.map_or(1.0, |a| meta.age_multiplier(a));
    if v > 1.0 {
        return Err(Error::MultiplierExceedsOne(v));
    }
    Ok(v)
}

/// Which bias terms exist.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasStructure {
    /// No bias terms.
    B1,
    /// Per (source, group), current-injector terms pinned to zero.
    B2,
    /// Per (source, group), ex-injector terms pinned to zero.
    B3,
    /// Per (source, group), non-injector terms pinned to zero.
    B4,
    /// Per (source, group).
    #[default]
    B5,
    /// Per group, shared across sources.
    B6,
    /// Per source, shared across groups.
    B7,
}

impl BiasStructure {
    pub const ALL: [BiasStructure; 7] = [
        BiasStructure::B1,
        BiasStructure::B2,
        BiasStructure::B3,
        BiasStructure::B4,
        BiasStructure::B5,
        BiasStructure::B6,
        BiasStructure::B7,
    ];

    /// Key of the term applied to a biased observation, or `None` when the
    /// structure pins it to zero.
    pub fn key(self, source: &str, group: RiskGroup) -> Option<BiasKey> {
        let sg = || Some(BiasKey { source: Some(source.to_string()), group: Some(group) });
        match self {
            BiasStructure::B1 => None,
            BiasStructure::B2 if group == RiskGroup::Current => None,
            BiasStructure::B3 if group == RiskGroup::Ex => None,
            BiasStructure::B4 if group == RiskGroup::Non => None,
            BiasStructure::B2 | BiasStructure::B3 | BiasStructure::B4 | BiasStructure::B5 => sg(),
            BiasStructure::B6 => Some(BiasKey { source: None, group: Some(group) }),
            BiasStructure::B7 => Some(BiasKey { source: Some(source.to_string()), group: None }),
        }
    }

    /// Key for a binomial observation, `None` if it is unbiased or pinned.
    pub fn key_for(self, obs: &BinomialObservation) -> Option<BiasKey> {
        if obs.bias_flag == BiasFlag::Unbiased {
            return None;
        }
        self.key(&obs.source_id, obs.target.key_group()?)
    }

    /// Keys referenced by the biased observations of a set.
    pub fn required_keys(self, obs: &ObservationSet) -> Vec<BiasKey> {
        let set: BTreeSet<_> = obs.binomial.iter().filter_map(|o| self.key_for(o)).collect();
        set.into_iter().collect()
    }
}

impl fmt::Display for BiasStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for BiasStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BiasStructure::ALL
            .into_iter()
            .find(|b| b.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Invalid(format!("unknown bias structure '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BiasKey {
    pub source: Option<String>,
    pub group: Option<RiskGroup>,
}

impl fmt::Display for BiasKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.source, self.group) {
            (Some(s), Some(g)) => write!(f, "{s}.{g}"),
            (Some(s), None) => f.write_str(s),
            (None, Some(g)) => write!(f, "{g}"),
            (None, None) => f.write_str("-"),
        }
    }
}

impl FromStr for BiasKey {
    type Err = Error;

    /// Parses `source.group`, `group` or `source`; a bare token that names a
    /// risk group is read as a group.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('.') {
            Some((src, g)) => Ok(BiasKey { source: Some(src.to_string()), group: Some(g.parse()?) }),
            None => match s.parse::<RiskGroup>() {
                Ok(g) => Ok(BiasKey { source: None, group: Some(g) }),
                Err(_) => Ok(BiasKey { source: Some(s.to_string()), group: None }),
            },
        }
    }
}

/// Values of the active bias terms.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasParams<T> {
    values: BTreeMap<BiasKey, T>,
}

impl<T: Scalar> BiasParams<T> {
    pub fn new(values: BTreeMap<BiasKey, T>) -> Self {
        BiasParams { values }
    }

    pub fn zeros(keys: &[BiasKey]) -> Self {
        BiasParams { values: keys.iter().map(|k| (k.clone(), T::zero())).collect() }
    }

    /// Checks that the key set is exactly the one the structure requires.
    pub fn for_structure(values: BTreeMap<BiasKey, T>, structure: BiasStructure, obs: &ObservationSet) -> Result<Self> {
        let required: BTreeSet<_> = structure.required_keys(obs).into_iter().collect();
        let given: BTreeSet<_> = values.keys().cloned().collect();
        if required != given {
            let missing: Vec<_> = required.difference(&given).map(|k| k.to_string()).collect();
            let extra: Vec<_> = given.difference(&required).map(|k| k.to_string()).collect();
            return Err(Error::BiasKeyMismatch(format!("missing [{}], unexpected [{}]", missing.join(", "), extra.join(", "))));
        }
        Ok(BiasParams { values })
    }

    pub fn get(&self, key: &BiasKey) -> Option<T> {
        self.values.get(key).copied()
    }

    pub fn keys(&self) -> impl Iterator<Item = &BiasKey> {
        self.values.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BiasKey, &T)> {
        self.values.iter()
    }
}

/// How bias and mixing compose for a biased mixture observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BiasComposition {
    /// Bias the census-weighted mixture.
    #[default]
    MixThenBias,
    /// Mix the individually biased components.
    BiasThenMix,
}

/// `invlogit(logit(q) + beta)`, exact at `beta = 0`.
pub fn apply_bias<T: Scalar>(q: T, beta: T) -> T {
    if beta == T::zero() {
        q
    } else {
        inv_logit(logit(q) + beta)
    }
}

/// Probability of a positive response for one binomial observation.
pub fn expected_probability<T: Scalar>(
    obs: &BinomialObservation,
    qs: &StratifiedQuantitySet<T>,
    census: &CensusTable,
    structure: BiasStructure,
    biases: &BiasParams<T>,
    composition: BiasComposition,
) -> Result<T> {
    let beta = match structure.key_for(obs) {
        None => None,
        Some(k) => Some(biases.get(&k).ok_or_else(|| Error::MissingBiasKey(k.to_string()))?),
    };
    Ok(match (beta, composition) {
        (None, _) => obs.target.value(qs, census),
        (Some(b), BiasComposition::MixThenBias) => apply_bias(obs.target.value(qs, census), b),
        (Some(b), BiasComposition::BiasThenMix) => {
            stable_sum(obs.target.components(qs, census).into_iter().map(|(w, v)| w * apply_bias(v, b)))
        }
    })
}

/// `ln C(n, y)`.
pub fn ln_binomial_coefficient(n: u64, y: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(y as f64 + 1.0) - ln_gamma((n - y) as f64 + 1.0)
}

/// `ln (N! / prod z_t!)`.
pub fn ln_multinomial_coefficient(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    ln_gamma(n as f64 + 1.0) - counts.iter().map(|&z| ln_gamma(z as f64 + 1.0)).sum::<f64>()
}

/// Binomial log-probability of `y` out of `n` including the coefficient.
/// Returns negative infinity for data impossible under `p`.
pub fn loglik_binomial<T: Scalar>(y: u64, n: u64, p: T) -> T {
    lit::<T>(ln_binomial_coefficient(n, y)) + loglik_binomial_kernel(y, n, p)
}

/// The `y ln p + (n - y) ln(1 - p)` part alone.
pub fn loglik_binomial_kernel<T: Scalar>(y: u64, n: u64, p: T) -> T {
    let mut ll = T::zero();
    if y > 0 {
        ll = ll + lit::<T>(y as f64) * p.ln();
    }
    if y < n {
        ll = ll + lit::<T>((n - y) as f64) * (-p).ln_1p();
    }
    if ll.is_nan() {
        T::neg_infinity()
    } else {
        ll
    }
}

pub fn loglik_multinomial<T: Scalar>(counts: &[u64], probs: &[T]) -> T {
    lit::<T>(ln_multinomial_coefficient(counts)) + loglik_multinomial_kernel(counts, probs)
}

pub fn loglik_multinomial_kernel<T: Scalar>(counts: &[u64], probs: &[T]) -> T {
    let mut ll = T::zero();
    for (&z, &p) in counts.iter().zip(probs) {
        if z > 0 {
            if !(p > T::zero()) {
                return T::neg_infinity();
            }
            ll = ll + lit::<T>(z as f64) * p.ln();
        }
    }
    ll
}

/// All observations plus source metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationSet {
    pub binomial: Vec<BinomialObservation>,
    pub multinomial: Vec<MultinomialObservation>,
    pub sources: BTreeMap<String, SourceMeta>,
}

/// Quantity families that need at least one unbiased observation.
pub const FAMILY_PROPORTIONS: &str = "injecting-status proportions (rho_ever, rho_cur, rho_ex)";
pub const FAMILY_PI_NON: &str = "non-injector prevalence (pi_non)";
pub const FAMILY_PI_EVER: &str = "injector prevalence (pi_cur, pi_ex, pi_ever_cell)";
pub const FAMILY_D: &str = "injecting duration distribution";
pub const FAMILY_TSS: &str = "time-since-start distribution";
pub const FAMILY_AAFU: &str = "age-at-first-use distribution";

impl ObservationSet {
    pub fn is_empty(&self) -> bool {
        self.binomial.is_empty() && self.multinomial.is_empty()
    }

    /// Source ids in sorted order, including sources known only from
    /// metadata.
    pub fn source_ids(&self) -> Vec<String> {
        let mut s: BTreeSet<String> = self.sources.keys().cloned().collect();
        s.extend(self.binomial.iter().map(|o| o.source_id.clone()));
        s.extend(self.multinomial.iter().map(|o| o.source_id.clone()));
        s.into_iter().collect()
    }

    /// Copy without the named source.
    pub fn without_source(&self, source: &str) -> Self {
        ObservationSet {
            binomial: self.binomial.iter().filter(|o| o.source_id != source).cloned().collect(),
            multinomial: self.multinomial.iter().filter(|o| o.source_id != source).cloned().collect(),
            sources: self.sources.iter().filter(|(k, _)| k.as_str() != source).map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    /// Quantity families lacking an unbiased informant under `structure`.
    pub fn unidentified_families(&self, structure: BiasStructure) -> Vec<String> {
        let unbiased = |o: &&BinomialObservation| structure.key_for(o).is_none();
        let informs = |o: &BinomialObservation, fam: &str| {
            let strata = o.target.strata();
            let injecting = strata.iter().all(|g| *g != RiskGroup::Non);
            match (&o.target, fam) {
                (Target::Lattice { measure: Measure::Rho, .. }, FAMILY_PROPORTIONS) => true,
                (Target::Lattice { measure: Measure::Pi, .. }, FAMILY_PI_NON) => strata.len() == 1 && !injecting,
                (Target::Lattice { measure: Measure::Pi, .. }, FAMILY_PI_EVER) => injecting,
                (Target::EverCell { .. }, FAMILY_PI_EVER) => true,
                _ => false,
            }
        };
        let mut missing = Vec::new();
        for fam in [FAMILY_PROPORTIONS, FAMILY_PI_NON, FAMILY_PI_EVER] {
            if !self.binomial.iter().filter(unbiased).any(|o| informs(o, fam)) {
                missing.push(fam.to_string());
            }
        }
        for (kind, fam) in [(SchemeKind::Duration, FAMILY_D), (SchemeKind::Tss, FAMILY_TSS), (SchemeKind::Aafu, FAMILY_AAFU)] {
            if !self.multinomial.iter().any(|o| o.target.variable == kind) {
                missing.push(fam.to_string());
            }
        }
        missing
    }

    /// Fails if any family lacks an unbiased informant.
    pub fn check_identifiability(&self, structure: BiasStructure) -> Result<()> {
        let missing = self.unidentified_families(structure);
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Identifiability(missing))
        }
    }

    /// Scales counts of non-city sources to city level in place:
    /// `y <- round(n * adjusted(y / n))`.
    pub fn apply_level_multipliers(&mut self) -> Result<()> {
        for o in &mut self.binomial {
            let Some(meta) = self.sources.get(&o.source_id) else { continue };
            if meta.level == GeographicLevel::City {
                continue;
            }
            let group = o.target.key_group().ok_or_else(|| {
                Error::UnresolvableTarget(format!("{}: level multipliers need a single risk group", o.id()))
            })?;
            let ages = o.target.ages();
            let age = if ages.len() == 1 { Some(ages[0]) } else { None };
            let p = apply_level_multipliers(o.y as f64 / o.n as f64, meta, group, age)?;
            o.y = (p * o.n as f64).round() as u64;
        }
        Ok(())
    }

    /// Reads observations; per-record problems are collected rather than
    /// returned on the first one.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<(Self, Vec<Error>)> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let required = ["source_id", "kind", "age_group", "bias_flag"];
        let missing: Vec<_> = required.iter().filter(|c| col(c).is_none()).collect();
        if !missing.is_empty() {
            return Err(Error::InvalidRecord { line: 1, message: format!("missing columns {missing:?}") });
        }
        let z_cols: Vec<Option<usize>> = (1..=10).map(|i| col(&format!("z_{i}"))).collect();
        let cols = Columns {
            source: col("source_id").unwrap(),
            kind: col("kind").unwrap(),
            age: col("age_group").unwrap(),
            d: col("duration_cat"),
            tss: col("tss_cat"),
            y: col("y"),
            n: col("n"),
            z: z_cols,
            flag: col("bias_flag").unwrap(),
        };
        let mut set = ObservationSet::default();
        let mut errors = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = match rec {
                Ok(r) => r,
                Err(e) => {
                    errors.push(Error::InvalidRecord { line, message: e.to_string() });
                    continue;
                }
            };
            match parse_record(&rec, &cols) {
                Ok(Parsed::Binomial(mut o)) => {
                    o.line = line;
                    set.binomial.push(o);
                }
                Ok(Parsed::Multinomial(mut o)) => {
                    o.line = line;
                    set.multinomial.push(o);
                }
                Err(e) => errors.push(Error::InvalidRecord { line, message: e.to_string() }),
            }
        }
        Ok((set, errors))
    }

    /// Reads observations, failing on the first bad record.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let (set, mut errors) = Self::read_csv(reader)?;
        if errors.is_empty() {
            Ok(set)
        } else {
            Err(errors.swap_remove(0))
        }
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> =
            ["source_id", "kind", "age_group", "duration_cat", "tss_cat", "y", "n"].map(String::from).to_vec();
        header.extend((1..=10).map(|i| format!("z_{i}")));
        header.push("bias_flag".into());
        w.write_record(&header)?;
        for o in &self.binomial {
            let (d, t) = match o.target {
                Target::EverCell { d_cat, tss_cat, .. } => (
                    TimeCategoryScheme::DURATION.label(d_cat),
                    TimeCategoryScheme::TSS.label(tss_cat),
                ),
                _ => (String::new(), String::new()),
            };
            let mut row = vec![
                o.source_id.clone(),
                o.target.kind_label(),
                AgeGroup::range_label(&o.target.ages()),
                if o.target.kind_label() == "pi_cur_tss" { String::new() } else { d },
                t,
                o.y.to_string(),
                o.n.to_string(),
            ];
            row.extend(std::iter::repeat_n(String::new(), 10));
            row.push(match o.bias_flag {
                BiasFlag::Biased => "biased".into(),
                BiasFlag::Unbiased => "unbiased".into(),
            });
            w.write_record(&row)?;
        }
        for o in &self.multinomial {
            let mut row = vec![
                o.source_id.clone(),
                o.target.kind_label(),
                o.target.age.map(|a| a.to_string()).unwrap_or_default(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ];
            row.extend((0..10).map(|i| o.counts.get(i).map(|z| z.to_string()).unwrap_or_default()));
            row.push("unbiased".into());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads source metadata from a TOML document with `[[source]]` tables.
    pub fn load_sources_toml(&mut self, text: &str) -> Result<()> {
        #[derive(Deserialize)]
        struct File {
            #[serde(default)]
            source: Vec<SourceMeta>,
        }
        let f: File = toml::from_str(text)?;
        for s in f.source {
            s.validate()?;
            self.sources.insert(s.id.clone(), s);
        }
        Ok(())
    }

    pub fn sources_toml(&self) -> Result<String> {
        #[derive(Serialize)]
        struct File<'a> {
            source: Vec<&'a SourceMeta>,
        }
        Ok(toml::to_string(&File { source: self.sources.values().collect() })?)
    }
}

struct Columns {
    source: usize,
    kind: usize,
    age: usize,
    d: Option<usize>,
    tss: Option<usize>,
    y: Option<usize>,
    n: Option<usize>,
    z: Vec<Option<usize>>,
    flag: usize,
}

enum Parsed {
    Binomial(BinomialObservation),
    Multinomial(MultinomialObservation),
}

fn field<'r>(rec: &'r csv::StringRecord, i: Option<usize>) -> &'r str {
    i.and_then(|i| rec.get(i)).unwrap_or("")
}

fn parse_count(s: &str, name: &str) -> Result<u64> {
    s.parse::<u64>().map_err(|_| Error::Invalid(format!("{name} = '{s}' is not a non-negative integer")))
}

/// Target named by a CSV `kind` plus its age and category columns.
#[derive(Clone, Debug, PartialEq)]
pub enum ParsedTarget {
    Binomial(Target),
    Multinomial(HistoryTarget),
}

pub fn parse_target(kind: &str, age: &str, duration_cat: &str, tss_cat: &str) -> Result<ParsedTarget> {
    if let Some(rest) = kind.strip_prefix("f_") {
        let (var, status) = rest.split_once('_').ok_or_else(|| Error::Invalid(format!("kind '{kind}'")))?;
        let variable = match var {
            "d" => SchemeKind::Duration,
            "tss" => SchemeKind::Tss,
            "aafu" => SchemeKind::Aafu,
            _ => return Err(Error::Invalid(format!("kind '{kind}'"))),
        };
        let age = if age.is_empty() { None } else { Some(age.parse::<AgeGroup>()?) };
        return Ok(ParsedTarget::Multinomial(HistoryTarget::new(variable, status.parse()?, age)?));
    }
    if age.is_empty() {
        return Err(Error::Invalid("binomial observations need an age_group".into()));
    }
    let ages = AgeGroup::parse_range(age)?;
    let target = match kind {
        "pi_ever_cell" | "pi_cur_tss" => {
            let [age] = ages[..] else {
                return Err(Error::Invalid(format!("{kind} needs a single age band")));
            };
            let tss_cat = TimeCategoryScheme::TSS.parse_category(tss_cat)?;
            let d_cat = if kind == "pi_cur_tss" {
                tss_cat
            } else {
                TimeCategoryScheme::DURATION.parse_category(duration_cat)?
            };
            Target::EverCell { age, d_cat, tss_cat }
        }
        _ => {
            let mut measure = None;
            let mut groups = Vec::new();
            for part in kind.split('+') {
                let (m, g) = part.trim().split_once('_').ok_or_else(|| Error::Invalid(format!("kind '{kind}'")))?;
                let m = match m {
                    "rho" => Measure::Rho,
                    "pi" => Measure::Pi,
                    _ => return Err(Error::Invalid(format!("kind '{kind}'"))),
                };
                if measure.is_some_and(|x| x != m) {
                    return Err(Error::Invalid(format!("kind '{kind}' mixes proportions and prevalences")));
                }
                measure = Some(m);
                groups.push(g.parse::<RiskGroup>()?);
            }
            Target::Lattice { measure: measure.expect("split yields a part"), groups, ages }
        }
    };
    target.validate()?;
    Ok(ParsedTarget::Binomial(target))
}

fn parse_record(rec: &csv::StringRecord, c: &Columns) -> Result<Parsed> {
    let source = field(rec, Some(c.source)).to_string();
    if source.is_empty() {
        return Err(Error::Invalid("empty source_id".into()));
    }
    let flag = match field(rec, Some(c.flag)).to_ascii_lowercase().as_str() {
        "" | "unbiased" | "u" | "0" => BiasFlag::Unbiased,
        "biased" | "b" | "1" => BiasFlag::Biased,
        other => return Err(Error::Invalid(format!("bias_flag '{other}'"))),
    };
    let target = parse_target(field(rec, Some(c.kind)), field(rec, Some(c.age)), field(rec, c.d), field(rec, c.tss))?;
    match target {
        ParsedTarget::Multinomial(target) => {
            if flag == BiasFlag::Biased {
                return Err(Error::Invalid("multinomial observations cannot be biased".into()));
            }
            let len = target.scheme().len();
            let mut counts = Vec::with_capacity(len);
            for i in 0..10 {
                let s = field(rec, c.z[i]);
                if i < len {
                    counts.push(parse_count(s, &format!("z_{}", i + 1))?);
                } else if !s.is_empty() {
                    return Err(Error::Invalid(format!("z_{} given for a {len}-category distribution", i + 1)));
                }
            }
            Ok(Parsed::Multinomial(MultinomialObservation::new(source, target, counts)?))
        }
        ParsedTarget::Binomial(target) => {
            let y = parse_count(field(rec, c.y), "y")?;
            let n = parse_count(field(rec, c.n), "n")?;
            Ok(Parsed::Binomial(BinomialObservation::new(source, target, y, n, flag)?))
        }
    }
}

/// Census weights `N_a / sum N` over the given bands.
pub fn age_weights(census: &CensusTable, ages: &[AgeGroup]) -> Vec<f64> {
    let total: f64 = ages.iter().map(|&a| census.population(a)).sum();
    ages.iter().map(|&a| census.population(a) / total).collect()
}

const _: () = assert!(AGE_GROUPS == 4);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strata::YearGrid;

    fn qs() -> StratifiedQuantitySet<f64> {
        let p = crate::params::RegressionParams::<f64> { alpha0: -3.2, gamma0: -4.0, delta0: 0.5, ..Default::default() };
        let cache = HistoryCache::new(DrugHistory::uniform(YearGrid::default())).unwrap();
        StratifiedQuantitySet::from_params(&p, &cache, &CensusTable::reference()).unwrap()
    }

    #[test]
    fn bias_odds_arithmetic() {
        let p = apply_bias(0.05_f64, 2.0_f64.ln());
        // odds 0.05/0.95 doubled, back to a probability
        let odds = 2.0 * 0.05 / 0.95;
        assert!((p - odds / (1.0 + odds)).abs() < 1e-15);
        assert!((p - 0.095_238).abs() < 1e-6);
        assert_eq!(apply_bias(0.3_f64, 0.0), 0.3);
    }

    #[test]
    fn nsduh_age_weights() {
        let w = age_weights(&CensusTable::reference(), &AgeGroup::parse_range("30-49").unwrap());
        assert!((w[0] - 1_249_662.0 / 2_382_634.0).abs() < 1e-15);
        assert!((w[0] - 0.52449).abs() < 5e-6 && (w[1] - 0.47551).abs() < 5e-6);
    }

    #[test]
    fn single_component_mixture_is_plain() {
        let q = qs();
        let census = CensusTable::reference();
        let a = AgeGroup::ALL[1];
        for m in [Measure::Rho, Measure::Pi] {
            let t = Target::single(m, RiskGroup::Ex, a);
            let comps = t.components(&q, &census);
            assert_eq!(comps.len(), 1);
            assert!((comps[0].0 - 1.0).abs() < 1e-15);
            assert!((comps[0].1 - t.value(&q, &census)).abs() < 1e-15);
        }
        // Ever prevalence as a mixture of its strata matches the stored value.
        let t = Target::Lattice { measure: Measure::Pi, groups: vec![RiskGroup::Current, RiskGroup::Ex], ages: vec![a] };
        assert!((t.value(&q, &census) - q.pi(RiskGroup::Ever, a)).abs() < 1e-15);
    }

    #[test]
    fn expected_probability_paths() {
        let q = qs();
        let census = CensusTable::reference();
        let a = AgeGroup::ALL[2];
        let obs = BinomialObservation::new("X", Target::single(Measure::Pi, RiskGroup::Non, a), 1, 10, BiasFlag::Biased).unwrap();
        let set = ObservationSet { binomial: vec![obs.clone()], ..Default::default() };
        let keys = BiasStructure::B5.required_keys(&set);
        assert_eq!(keys.len(), 1);
        assert_eq!(keys[0].to_string(), "X.non");
        let zero = BiasParams::<f64>::zeros(&keys);
        let p0 = expected_probability(&obs, &q, &census, BiasStructure::B5, &zero, BiasComposition::MixThenBias).unwrap();
        assert_eq!(p0, q.pi(RiskGroup::Non, a));
        let mut prev = p0;
        for b in [0.1, 0.5, 1.0, 3.0] {
            let bp = BiasParams::new([(keys[0].clone(), b)].into_iter().collect());
            let p = expected_probability(&obs, &q, &census, BiasStructure::B5, &bp, BiasComposition::MixThenBias).unwrap();
            assert!(p > prev);
            prev = p;
        }
        let empty = BiasParams::<f64>::zeros(&[]);
        assert!(matches!(
            expected_probability(&obs, &q, &census, BiasStructure::B5, &empty, BiasComposition::MixThenBias),
            Err(Error::MissingBiasKey(_))
        ));
        // B4 pins non-injector terms.
        assert!(BiasStructure::B4.required_keys(&set).is_empty());
        assert_eq!(
            expected_probability(&obs, &q, &census, BiasStructure::B4, &empty, BiasComposition::MixThenBias).unwrap(),
            p0
        );
    }

    #[test]
    fn structure_keys() {
        assert_eq!(BiasStructure::B6.key("A", RiskGroup::Ex).unwrap().to_string(), "ex");
        assert_eq!(BiasStructure::B7.key("A", RiskGroup::Ex).unwrap().to_string(), "A");
        assert!(BiasStructure::B2.key("A", RiskGroup::Current).is_none());
        assert!(BiasStructure::B2.key("A", RiskGroup::Ever).is_some());
        assert!(BiasStructure::B3.key("A", RiskGroup::Ex).is_none());
        assert_eq!("A.cur".parse::<BiasKey>().unwrap(), BiasStructure::B5.key("A", RiskGroup::Current).unwrap());
        assert_eq!("b3".parse::<BiasStructure>().unwrap(), BiasStructure::B3);
    }

    #[test]
    fn loglik_values() {
        let p = 0.25_f64;
        assert!((loglik_binomial(0, 10, p) - 10.0 * (0.75_f64).ln()).abs() < 1e-12);
        assert!((loglik_binomial(10, 10, p) - 10.0 * p.ln()).abs() < 1e-12);
        let oracle = 120.0_f64.ln() + 3.0 * 0.25_f64.ln() + 7.0 * 0.75_f64.ln();
        assert!((loglik_binomial(3, 10, p) - oracle).abs() < 1e-12);
        assert_eq!(loglik_binomial(1, 10, 0.0_f64), f64::NEG_INFINITY);
        assert_eq!(loglik_binomial(9, 10, 1.0_f64), f64::NEG_INFINITY);
        assert_eq!(loglik_binomial(0, 10, 0.0_f64), 0.0);

        // 10! / (3! 5! 2!) = 2520
        let m = loglik_multinomial(&[3, 5, 2], &[0.3, 0.5, 0.2]);
        let oracle = 2520.0_f64.ln() + 3.0 * 0.3_f64.ln() + 5.0 * 0.5_f64.ln() + 2.0 * 0.2_f64.ln();
        assert!((m - oracle).abs() < 1e-12);
        assert!(loglik_multinomial(&[0, 7, 0], &[0.0, 1.0, 0.0_f64]).abs() < 1e-12);
        let k = 4.0_f64;
        assert!((loglik_multinomial(&[2, 2, 2, 2], &[0.25; 4]) - (2520.0_f64.ln() + 8.0 * (1.0 / k).ln())).abs() < 1e-12);
        assert_eq!(loglik_multinomial(&[1, 0], &[0.0, 1.0_f64]), f64::NEG_INFINITY);
    }

    #[test]
    fn level_multipliers() {
        let mut meta = SourceMeta { id: "N".into(), level: GeographicLevel::National, ..Default::default() };
        meta.group_multipliers.insert("cur".into(), 0.4);
        meta.age_multipliers.insert("20-29".into(), 0.9);
        meta.validate().unwrap();
        let v = apply_level_multipliers(0.02, &meta, RiskGroup::Current, Some(AgeGroup::ALL[0])).unwrap();
        assert!((v - 0.0072).abs() < 1e-15);
        assert_eq!(apply_level_multipliers(0.02, &SourceMeta::city("C"), RiskGroup::Current, None).unwrap(), 0.02);
        assert!(SourceMeta::city("C").validate().is_ok());
        meta.level = GeographicLevel::City;
        assert!(meta.validate().is_err());
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let text = "\
source_id,kind,age_group,duration_cat,tss_cat,y,n,z_1,z_2,z_3,z_4,z_5,z_6,z_7,z_8,z_9,z_10,bias_flag
S,rho_ever,20-29,,,10,400,,,,,,,,,,,unbiased
S,rho_cur+rho_ex,30-49,,,50,1000,,,,,,,,,,,biased
S,pi_ever_cell,40-49,5-9,10-14,4,40,,,,,,,,,,,unbiased
S,pi_cur_tss,40-49,,1-4,4,40,,,,,,,,,,,biased
S,f_tss_cur,,,,,,1,2,3,4,5,6,7,,,,
";
        let set = ObservationSet::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(set.binomial.len(), 4);
        assert_eq!(set.multinomial.len(), 1);
        assert_eq!(set.binomial[1].target.key_group(), Some(RiskGroup::Ever));
        assert_eq!(set.binomial[3].target, Target::current_at_tss(AgeGroup::ALL[2], 1));
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let again = ObservationSet::from_csv_reader(buf.as_slice()).unwrap();
        assert_eq!(again.binomial, set.binomial.iter().map(|o| BinomialObservation { line: o.line, ..o.clone() }).collect::<Vec<_>>());

        let bad = "source_id,kind,age_group,y,n,bias_flag\nS,rho_ever,20-29,5,4,unbiased\nS,rho_ever,20-29,1,4,x\n";
        let (_, errs) = ObservationSet::read_csv(bad.as_bytes()).unwrap();
        assert_eq!(errs.len(), 2);
        assert!(matches!(errs[0], Error::InvalidRecord { line: 2, .. }));
        assert!(matches!(errs[1], Error::InvalidRecord { line: 3, .. }));
    }

    #[test]
    fn identifiability_guard() {
        let a = AgeGroup::ALL[0];
        let mk = |m, g, f| BinomialObservation::new("S", Target::single(m, g, a), 1, 10, f).unwrap();
        let hist = |v| MultinomialObservation::new("S", HistoryTarget::new(v, RiskGroup::Ever, None).unwrap(), vec![1; TimeCategoryScheme::of(v).len()]).unwrap();
        let mut set = ObservationSet {
            binomial: vec![
                mk(Measure::Rho, RiskGroup::Ever, BiasFlag::Unbiased),
                mk(Measure::Pi, RiskGroup::Non, BiasFlag::Biased),
                mk(Measure::Pi, RiskGroup::Current, BiasFlag::Unbiased),
            ],
            multinomial: vec![hist(SchemeKind::Duration), hist(SchemeKind::Tss), hist(SchemeKind::Aafu)],
            ..Default::default()
        };
        assert_eq!(set.unidentified_families(BiasStructure::B5), vec![FAMILY_PI_NON.to_string()]);
        // Pinning non-injector bias makes the biased source count as unbiased.
        assert!(set.check_identifiability(BiasStructure::B4).is_ok());
        assert!(set.check_identifiability(BiasStructure::B1).is_ok());
        set.multinomial.pop();
        assert!(matches!(set.check_identifiability(BiasStructure::B1), Err(Error::Identifiability(v)) if v == vec![FAMILY_AAFU.to_string()]));
    }
}
