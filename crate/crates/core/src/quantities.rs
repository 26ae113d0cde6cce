//! The deterministic map from parameters to every proportion and prevalence
//! on the (risk group x age) lattice, plus the census-weighted aggregates.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::history::{BandHistory, HistoryCache, Window};
use crate::num::{stable_sum, to_f64, Scalar};
use crate::params::{DrugHistory, RegressionParams};
use crate::strata::{AgeGroup, CensusTable, RiskGroup, TimeCategoryScheme, AGE_GROUPS};

const CATS: usize = 7;

/// Position of a group in the `[current, ex, non, ever]` arrays used below.
pub fn group_index(g: RiskGroup) -> usize {
    match g {
        RiskGroup::Current => 0,
        RiskGroup::Ex => 1,
        RiskGroup::Non => 2,
        RiskGroup::Ever => 3,
    }
}

pub const GROUPS: [RiskGroup; 4] = [RiskGroup::Current, RiskGroup::Ex, RiskGroup::Non, RiskGroup::Ever];

/// Splits the ever-injecting proportion into `(ex, current, non)`.
pub fn split_proportions<T: Scalar>(rho_ever: T, kappa: T) -> (T, T, T) {
    (rho_ever * kappa, rho_ever * (T::one() - kappa), T::one() - rho_ever)
}

/// Prevalence among current injectors, summed over single years of time
/// since starting. Current injectors have `d = tss`.
pub fn pi_current<T: Scalar>(a: AgeGroup, params: &RegressionParams<T>, history: &DrugHistory<T>) -> Result<T> {
    let band = BandHistory::new(history, Window::Band(a))?;
    let f_cur = band.tss_given_current()?;
    let scheme = TimeCategoryScheme::TSS;
    let mut terms = Vec::with_capacity(f_cur.len());
    for (t, &w) in f_cur.iter().enumerate() {
        let c = scheme.year_to_category(t as i64)?;
        terms.push(w * params.pi_ever_cell(c, c, a)?);
    }
    Ok(stable_sum(terms))
}

/// Prevalence among ex-injectors: time since starting under its ex-injector
/// distribution, duration under its pmf truncated to `l < t`.
pub fn pi_ex<T: Scalar>(a: AgeGroup, params: &RegressionParams<T>, history: &DrugHistory<T>) -> Result<T> {
    let band = BandHistory::new(history, Window::Band(a))?;
    let f_ex = band.tss_given_ex()?;
    let f_d = history.duration_yearly();
    let d_before = band.duration_before();
    let (dur, tss) = (TimeCategoryScheme::DURATION, TimeCategoryScheme::TSS);
    let mut outer = Vec::with_capacity(f_ex.len());
    for (t, &w) in f_ex.iter().enumerate() {
        if w == T::zero() {
            continue;
        }
        let norm = d_before[t];
        if !(norm > T::zero()) {
            return Err(Error::InconsistentHistory(format!(
                "P(D < {t}) = 0 but ex-injector time since start has mass there"
            )));
        }
        let tc = tss.year_to_category(t as i64)?;
        let mut inner = Vec::with_capacity(t);
        for (l, &fl) in f_d.iter().enumerate().take(t) {
            inner.push(params.pi_ever_cell(dur.year_to_category(l as i64)?, tc, a)? * fl);
        }
        outer.push(w * stable_sum(inner) / norm);
    }
    Ok(stable_sum(outer))
}

/// Same value as [`pi_current`] using the cached category weights.
pub fn pi_current_cached<T: Scalar>(a: AgeGroup, params: &RegressionParams<T>, cache: &HistoryCache<T>) -> Result<T> {
    let w = cache
        .band(a)
        .current_tss
        .ok_or_else(|| Error::DegenerateStratum(format!("kappa = 1 at age {a}")))?;
    let mut s = T::zero();
    for (c, &wc) in w.iter().enumerate() {
        s = s + wc * params.pi_ever_cell(c, c, a)?;
    }
    Ok(s)
}

/// Same value as [`pi_ex`] using the cached category weights.
pub fn pi_ex_cached<T: Scalar>(a: AgeGroup, params: &RegressionParams<T>, cache: &HistoryCache<T>) -> Result<T> {
    let j = cache
        .band(a)
        .ex_joint
        .ok_or_else(|| Error::DegenerateStratum(format!("kappa = 0 at age {a}")))?;
    let mut s = T::zero();
    for (d, row) in j.iter().enumerate() {
        for (c, &w) in row.iter().enumerate() {
            if w != T::zero() {
                s = s + w * params.pi_ever_cell(d, c, a)?;
            }
        }
    }
    Ok(s)
}

/// Census-weighted summaries. Group arrays are indexed
/// `[current, ex, non, ever]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct Aggregates<T> {
    /// Prevalence by age over all groups.
    pub pi_age: [T; AGE_GROUPS],
    pub rho_group: [T; 4],
    pub pi_group: [T; 4],
    pub pi: T,
}

impl<T: Scalar> Aggregates<T> {
    /// Builds aggregates from group-by-age proportions and prevalences
    /// (indexed `[current, ex, non]` then age).
    pub fn compute(rho: &[[T; AGE_GROUPS]; 3], pi: &[[T; AGE_GROUPS]; 3], census: &CensusTable) -> Self {
        let n: [T; AGE_GROUPS] = census.weights();
        let total = stable_sum(n.iter().copied());
        let mut pi_age = [T::zero(); AGE_GROUPS];
        for a in 0..AGE_GROUPS {
            pi_age[a] = stable_sum((0..3).map(|g| rho[g][a] * pi[g][a]));
        }
        let mut rho_group = [T::zero(); 4];
        let mut pi_group = [T::zero(); 4];
        for g in 0..3 {
            let num = stable_sum((0..AGE_GROUPS).map(|a| n[a] * rho[g][a] * pi[g][a]));
            let den = stable_sum((0..AGE_GROUPS).map(|a| n[a] * rho[g][a]));
            rho_group[g] = den / total;
            pi_group[g] = if den > T::zero() { num / den } else { T::zero() };
        }
        let ever_num = stable_sum((0..AGE_GROUPS).flat_map(|a| (0..2).map(move |g| (a, g))).map(|(a, g)| n[a] * rho[g][a] * pi[g][a]));
        let ever_den = stable_sum((0..AGE_GROUPS).flat_map(|a| (0..2).map(move |g| (a, g))).map(|(a, g)| n[a] * rho[g][a]));
        rho_group[3] = ever_den / total;
        pi_group[3] = if ever_den > T::zero() { ever_num / ever_den } else { T::zero() };
        let pi_all = stable_sum((0..AGE_GROUPS).map(|a| n[a] * pi_age[a])) / total;
        Aggregates { pi_age, rho_group, pi_group, pi: pi_all }
    }
}

/// Every cell quantity and aggregate for one parameter value.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct StratifiedQuantitySet<T> {
    /// `[current, ex, non, ever]` by age.
    pub rho: [[T; AGE_GROUPS]; 4],
    pub pi: [[T; AGE_GROUPS]; 4],
    pub kappa: [T; AGE_GROUPS],
    /// Ever-injector prevalence by `(age, duration cat, tss cat)`.
    pub pi_ever_cell: Vec<T>,
    pub aggregates: Aggregates<T>,
}

fn cell_index(a: AgeGroup, d: usize, t: usize) -> usize {
    (a.index() * CATS + d) * CATS + t
}

impl<T: Scalar> StratifiedQuantitySet<T> {
    pub fn from_params(params: &RegressionParams<T>, cache: &HistoryCache<T>, census: &CensusTable) -> Result<Self> {
        let mut rho = [[T::zero(); AGE_GROUPS]; 4];
        let mut pi = [[T::zero(); AGE_GROUPS]; 4];
        let mut kappa = [T::zero(); AGE_GROUPS];
        let mut cells = vec![T::zero(); AGE_GROUPS * CATS * CATS];
        for a in AgeGroup::ALL {
            let i = a.index();
            for d in 0..CATS {
                for t in 0..CATS {
                    cells[cell_index(a, d, t)] = params.pi_ever_cell(d, t, a)?;
                }
            }
            let k = cache.kappa(a);
            let rho_ever = params.rho_ever(a);
            let (ex, cur, non) = split_proportions(rho_ever, k);
            kappa[i] = k;
            rho[0][i] = cur;
            rho[1][i] = ex;
            rho[2][i] = non;
            rho[3][i] = rho_ever;
            pi[0][i] = pi_current_cached(a, params, cache)?;
            pi[1][i] = pi_ex_cached(a, params, cache)?;
            pi[2][i] = params.pi_non(a);
            pi[3][i] = (cur * pi[0][i] + ex * pi[1][i]) / rho_ever;
        }
        let aggregates = Aggregates::compute(&[rho[0], rho[1], rho[2]], &[pi[0], pi[1], pi[2]], census);
        Ok(StratifiedQuantitySet { rho, pi, kappa, pi_ever_cell: cells, aggregates })
    }

    pub fn rho(&self, g: RiskGroup, a: AgeGroup) -> T {
        self.rho[group_index(g)][a.index()]
    }

    pub fn pi(&self, g: RiskGroup, a: AgeGroup) -> T {
        self.pi[group_index(g)][a.index()]
    }

    pub fn kappa(&self, a: AgeGroup) -> T {
        self.kappa[a.index()]
    }

    pub fn pi_ever_cell(&self, d_cat: usize, tss_cat: usize, a: AgeGroup) -> T {
        self.pi_ever_cell[cell_index(a, d_cat, tss_cat)]
    }

    /// Values in the order of [`tracked_names`].
    pub fn tracked_values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(TRACKED_LEN);
        for g in 0..4 {
            v.extend(self.rho[g].iter().map(|&x| to_f64(x)));
        }
        for g in 0..4 {
            v.extend(self.pi[g].iter().map(|&x| to_f64(x)));
        }
        for g in 0..3 {
            v.extend((0..AGE_GROUPS).map(|a| to_f64(self.rho[g][a] * self.pi[g][a])));
        }
        v.extend(self.kappa.iter().map(|&x| to_f64(x)));
        let ag = &self.aggregates;
        v.extend(ag.pi_age.iter().map(|&x| to_f64(x)));
        v.extend(ag.rho_group.iter().map(|&x| to_f64(x)));
        v.extend(ag.pi_group.iter().map(|&x| to_f64(x)));
        v.push(to_f64(ag.pi));
        v
    }
}

const TRACKED_LEN: usize = 16 + 16 + 12 + 4 + 4 + 4 + 4 + 1;

/// Names of every tracked lattice quantity: `rho.{g}.{age}`, `pi.{g}.{age}`,
/// `rhopi.{g}.{age}`, `kappa.{age}`, `pi.age.{age}`, `rho.{g}`, `pi.{g}`, `pi`.
pub fn tracked_names() -> Vec<String> {
    let mut n = Vec::with_capacity(TRACKED_LEN);
    for prefix in ["rho", "pi"] {
        for g in GROUPS {
            n.extend(AgeGroup::ALL.iter().map(|a| format!("{prefix}.{g}.{a}")));
        }
    }
    for g in RiskGroup::STRATA {
        n.extend(AgeGroup::ALL.iter().map(|a| format!("rhopi.{g}.{a}")));
    }
    n.extend(AgeGroup::ALL.iter().map(|a| format!("kappa.{a}")));
    n.extend(AgeGroup::ALL.iter().map(|a| format!("pi.age.{a}")));
    n.extend(GROUPS.iter().map(|g| format!("rho.{g}")));
    n.extend(GROUPS.iter().map(|g| format!("pi.{g}")));
    n.push("pi".into());
    n
}
