//! Synthetic populations and data sets with known truth.
//!
//! [`simulate_careers`] draws injecting careers directly from the
//! independence model (age at first use, time since starting and duration
//! drawn separately, age their sum) and keeps those landing in the requested
//! band. Its tabulations are an independent check on the closed-form
//! conditionals in [`crate::history`]. [`generate_observations`] draws a data
//! set from a [`Scenario`]'s analytic truth.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::HistoryCache;
use crate::inference::sampler::chain_rng;
use crate::num::logit;
use crate::observation::{
    expected_probability, parse_target, BiasComposition, BiasFlag, BiasKey, BiasParams, BiasStructure,
    BinomialObservation, GeographicLevel, MultinomialObservation, ObservationSet, ParsedTarget, SourceMeta, Target,
};
use crate::params::{DrugHistory, RegressionParams};
use crate::quantities::{tracked_names, StratifiedQuantitySet};
use crate::strata::{AgeGroup, CensusTable, RiskGroup, TimeCategoryScheme, YearGrid, AGE_GROUPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CareerStatus {
    Current,
    Ex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CareerRecord {
    pub age: u32,
    pub aafu: u32,
    pub tss: u32,
    /// Defined for ex-injectors only.
    pub duration: Option<u32>,
    pub status: CareerStatus,
    pub hcv: bool,
}

const SHARD: usize = 50_000;
const MAX_REJECTIONS: usize = 10_000;

struct CategoryYearSampler {
    index: WeightedIndex<f64>,
    bounds: &'static [(u32, u32)],
}

impl CategoryYearSampler {
    fn new(mass: &[f64], scheme: TimeCategoryScheme) -> Result<Self> {
        let index = WeightedIndex::new(mass).map_err(|e| Error::Invalid(format!("category masses: {e}")))?;
        Ok(CategoryYearSampler { index, bounds: scheme.all_bounds() })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let (lo, hi) = self.bounds[self.index.sample(rng)];
        rng.random_range(lo..=hi)
    }
}

/// Simulates `n` careers of ever-injectors whose age falls in band `a`.
/// Each record's HCV status is a Bernoulli draw with the ever-injector cell
/// prevalence, using `d = tss` for current injectors.
pub fn simulate_careers(
    n: usize,
    a: AgeGroup,
    history: &DrugHistory<f64>,
    params: &RegressionParams<f64>,
    seed: u64,
) -> Result<Vec<CareerRecord>> {
    if n == 0 {
        return Err(Error::Invalid("need at least one career".into()));
    }
    // Feasibility check before any sampling loop.
    crate::history::BandHistory::new(history, crate::history::Window::Band(a))?;
    let aafu = CategoryYearSampler::new(history.aafu(), TimeCategoryScheme::AAFU)?;
    let tss = CategoryYearSampler::new(history.tss(), TimeCategoryScheme::TSS)?;
    let dur = CategoryYearSampler::new(history.duration(), TimeCategoryScheme::DURATION)?;
    let shards = n.div_ceil(SHARD);
    let out: Vec<Vec<CareerRecord>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut rng: ChaCha8Rng = chain_rng(seed, s);
            let want = SHARD.min(n - s * SHARD);
            let mut recs = Vec::with_capacity(want);
            let mut misses = 0;
            while recs.len() < want {
                let u = aafu.sample(&mut rng);
                let t = tss.sample(&mut rng);
                let d = dur.sample(&mut rng);
                let age = u + t;
                if age < a.lower() || age > a.upper() {
                    misses += 1;
                    if misses > MAX_REJECTIONS * want {
                        return Err(Error::EmptyWindow(format!("band {a} is practically unreachable")));
                    }
                    continue;
                }
                let ex = d < t;
                let tc = TimeCategoryScheme::TSS.year_to_category(t as i64)?;
                let dc = if ex { TimeCategoryScheme::DURATION.year_to_category(d as i64)? } else { tc };
                let p = params.pi_ever_cell(dc, tc, a)?;
                recs.push(CareerRecord {
                    age,
                    aafu: u,
                    tss: t,
                    duration: ex.then_some(d),
                    status: if ex { CareerStatus::Ex } else { CareerStatus::Current },
                    hcv: rng.random::<f64>() < p,
                });
            }
            Ok(recs)
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Frequency tabulations of simulated careers. Distributions are yearly
/// (ages for age at first use); an entry is `None` when its conditioning
/// class is empty.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalConditionals {
    pub n: usize,
    pub n_ex: usize,
    pub kappa: Option<f64>,
    pub tss_ever: Option<Vec<f64>>,
    pub duration_ex: Option<Vec<f64>>,
    pub tss_current: Option<Vec<f64>>,
    pub tss_ex: Option<Vec<f64>>,
    pub aafu_ever: Option<Vec<f64>>,
    pub aafu_current: Option<Vec<f64>>,
    pub aafu_ex: Option<Vec<f64>>,
    pub pi_current: Option<f64>,
    pub pi_ex: Option<f64>,
}

fn normalise(counts: Vec<u64>) -> Option<Vec<f64>> {
    let total: u64 = counts.iter().sum();
    (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect())
}

pub fn empirical_conditionals(records: &[CareerRecord], grid: &YearGrid) -> EmpiricalConditionals {
    let years = grid.t_max() as usize + 1;
    let ages = grid.yearly_len(&TimeCategoryScheme::AAFU);
    let (mut tss_all, mut tss_cur, mut tss_ex, mut d_ex) = (vec![0; years], vec![0; years], vec![0; years], vec![0; years]);
    let (mut u_all, mut u_cur, mut u_ex) = (vec![0; ages], vec![0; ages], vec![0; ages]);
    let (mut hcv_cur, mut hcv_ex) = (0u64, 0u64);
    for r in records {
        tss_all[r.tss as usize] += 1;
        u_all[r.aafu as usize] += 1;
        match r.status {
            CareerStatus::Current => {
                tss_cur[r.tss as usize] += 1;
                u_cur[r.aafu as usize] += 1;
                hcv_cur += r.hcv as u64;
            }
            CareerStatus::Ex => {
                tss_ex[r.tss as usize] += 1;
                u_ex[r.aafu as usize] += 1;
                d_ex[r.duration.expect("ex records carry a duration") as usize] += 1;
                hcv_ex += r.hcv as u64;
            }
        }
    }
    let n = records.len();
    let n_ex = records.iter().filter(|r| r.status == CareerStatus::Ex).count();
    let n_cur = n - n_ex;
    EmpiricalConditionals {
        n,
        n_ex,
        kappa: (n > 0).then(|| n_ex as f64 / n as f64),
        tss_ever: normalise(tss_all),
        duration_ex: normalise(d_ex),
        tss_current: normalise(tss_cur),
        tss_ex: normalise(tss_ex),
        aafu_ever: normalise(u_all),
        aafu_current: normalise(u_cur),
        aafu_ex: normalise(u_ex),
        pi_current: (n_cur > 0).then(|| hcv_cur as f64 / n_cur as f64),
        pi_ex: (n_ex > 0).then(|| hcv_ex as f64 / n_ex as f64),
    }
}

/// Total-variation distance between two pmfs, zero-padding the shorter.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n).map(|i| (p.get(i).unwrap_or(&0.0) - q.get(i).unwrap_or(&0.0)).abs()).sum::<f64>()
}

/// Category masses of the three history simplexes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistorySpec {
    pub duration: Vec<f64>,
    pub tss: Vec<f64>,
    pub aafu: Vec<f64>,
}

impl HistorySpec {
    pub fn build(&self, grid: YearGrid) -> Result<DrugHistory<f64>> {
        DrugHistory::new(self.duration.clone(), self.tss.clone(), self.aafu.clone(), grid)
    }
}

/// One designed observation: a target in CSV vocabulary plus sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub source: String,
    pub kind: String,
    #[serde(default)]
    pub age_group: String,
    #[serde(default)]
    pub duration_cat: String,
    #[serde(default)]
    pub tss_cat: String,
    /// Binomial denominator, or the multinomial total.
    pub n: u64,
    #[serde(default)]
    pub biased: bool,
}

/// True parameters plus an observation design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub regression: RegressionParams<f64>,
    pub history: HistorySpec,
    pub census: [f64; AGE_GROUPS],
    /// True per-(source, group) bias, keyed `SOURCE.group`; absent keys are
    /// zero.
    #[serde(default)]
    pub biases: BTreeMap<String, f64>,
    #[serde(default)]
    pub sources: Vec<SourceMeta>,
    pub design: Vec<DesignRow>,
}

/// True quantities for recovery scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub quantities: BTreeMap<String, f64>,
    pub biases: BTreeMap<String, f64>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn census_table(&self) -> Result<CensusTable> {
        CensusTable::new(self.census)
    }

    pub fn drug_history(&self) -> Result<DrugHistory<f64>> {
        self.history.build(YearGrid::default())
    }

    pub fn true_quantities(&self) -> Result<StratifiedQuantitySet<f64>> {
        let cache = HistoryCache::new(self.drug_history()?)?;
        StratifiedQuantitySet::from_params(&self.regression, &cache, &self.census_table()?)
    }

    pub fn truth(&self) -> Result<Truth> {
        let qs = self.true_quantities()?;
        Ok(Truth {
            quantities: tracked_names().into_iter().zip(qs.tracked_values()).collect(),
            biases: self.biases.clone(),
        })
    }

    fn bias_params(&self) -> Result<BiasParams<f64>> {
        let mut values = BTreeMap::new();
        for (k, &v) in &self.biases {
            values.insert(k.parse::<BiasKey>()?, v);
        }
        Ok(BiasParams::new(values))
    }

    /// The same design with every true bias set to zero.
    pub fn without_bias(&self) -> Self {
        Scenario { biases: BTreeMap::new(), ..self.clone() }
    }

    /// Ten-source design with the source/target layout of a city-wide
    /// hepatitis C synthesis: household surveys, clinics, jails, treatment
    /// programmes and injector studies, one national survey with level
    /// multipliers.
    pub fn facsimile() -> Self {
        facsimile()
    }
}

/// Draws a data set from the scenario's analytic truth. Non-city sources
/// are generated at their own level, so ingesting them with
/// [`ObservationSet::apply_level_multipliers`] recovers city-level counts.
pub fn generate_observations(scenario: &Scenario, seed: u64) -> Result<ObservationSet> {
    let census = scenario.census_table()?;
    let cache = HistoryCache::new(scenario.drug_history()?)?;
    let qs = StratifiedQuantitySet::from_params(&scenario.regression, &cache, &census)?;
    let biases = scenario.bias_params()?;
    let mut rng = chain_rng(seed, 0);
    let mut set = ObservationSet::default();
    for s in &scenario.sources {
        s.validate()?;
        set.sources.insert(s.id.clone(), s.clone());
    }
    for row in &scenario.design {
        match parse_target(&row.kind, &row.age_group, &row.duration_cat, &row.tss_cat)? {
            ParsedTarget::Binomial(target) => {
                let flag = if row.biased { BiasFlag::Biased } else { BiasFlag::Unbiased };
                let mut obs = BinomialObservation::new(row.source.clone(), target, 0, row.n, flag)?;
                let mut p = expected_probability(&obs, &qs, &census, BiasStructure::B5, &biases, BiasComposition::MixThenBias)
                    .or_else(|e| match e {
                        // Undeclared true biases are zero.
                        Error::MissingBiasKey(_) => Ok(obs.target.value(&qs, &census)),
                        e => Err(e),
                    })?;
                if let Some(meta) = set.sources.get(&row.source).filter(|m| m.level != GeographicLevel::City) {
                    p = to_source_level(p, meta, &obs.target)?;
                }
                obs.y = rng.sample(Binomial::new(row.n, p).map_err(|e| Error::Invalid(e.to_string()))?);
                set.binomial.push(obs);
            }
            ParsedTarget::Multinomial(target) => {
                let probs = target.predicted(&qs, &cache, &census)?;
                let counts = draw_multinomial(&mut rng, row.n, &probs)?;
                set.multinomial.push(MultinomialObservation::new(row.source.clone(), target, counts)?);
            }
        }
    }
    let used: Vec<String> = BiasStructure::B5.required_keys(&set).iter().map(|k| k.to_string()).collect();
    if let Some(k) = scenario.biases.keys().find(|k| !used.contains(k)) {
        return Err(Error::BiasKeyMismatch(format!("true bias {k} matches no biased observation")));
    }
    Ok(set)
}

fn to_source_level(p: f64, meta: &SourceMeta, target: &Target) -> Result<f64> {
    let g = target
        .key_group()
        .ok_or_else(|| Error::UnresolvableTarget(format!("level multipliers for {target}")))?;
    let ages = target.ages();
    let am = if ages.len() == 1 { meta.age_multiplier(ages[0]) } else { 1.0 };
    let v = p / (meta.group_multiplier(g) * am);
    if v > 1.0 {
        return Err(Error::MultiplierExceedsOne(v));
    }
    Ok(v)
}

fn draw_multinomial<R: Rng>(rng: &mut R, n: u64, probs: &[f64]) -> Result<Vec<u64>> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        if i + 1 == probs.len() || left == 0 {
            out.push(if i + 1 == probs.len() { left } else { 0 });
            if i + 1 < probs.len() {
                continue;
            }
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let z = rng.sample(Binomial::new(left, q).map_err(|e| Error::Invalid(e.to_string()))?);
        out.push(z);
        left -= z;
        mass -= p;
    }
    Ok(out)
}

fn row(source: &str, kind: &str, age: &str, n: u64, biased: bool) -> DesignRow {
    DesignRow {
        source: source.into(),
        kind: kind.into(),
        age_group: age.into(),
        duration_cat: String::new(),
        tss_cat: String::new(),
        n,
        biased,
    }
}

fn facsimile() -> Scenario {
    let ages = ["20-29", "30-39", "40-49", "50-59"];
    let rho_ever = [0.0218, 0.0293, 0.0366, 0.0395];
    let pi_non = [0.0005, 0.0041, 0.018, 0.024];
    let base = |v: &[f64; 4]| {
        let b = logit(v[3]);
        (b, [logit(v[0]) - b, logit(v[1]) - b, logit(v[2]) - b])
    };
    let (alpha0, alpha1) = base(&rho_ever);
    let (gamma0, gamma1) = base(&pi_non);
    let regression = RegressionParams {
        alpha0,
        alpha1,
        gamma0,
        gamma1,
        delta0: 0.8,
        delta1: [-0.6, -0.3, -0.1],
        delta2: [-1.5, -1.0, -0.6, -0.4, -0.2, -0.1],
        delta3: [-1.2, -0.9, -0.5, -0.3, -0.2, -0.1],
    };
    let history = HistorySpec {
        duration: vec![0.10, 0.25, 0.22, 0.15, 0.10, 0.12, 0.06],
        tss: vec![0.03, 0.10, 0.15, 0.17, 0.15, 0.22, 0.18],
        aafu: vec![0.02, 0.06, 0.20, 0.25, 0.18, 0.12, 0.08, 0.05, 0.03, 0.01],
    };
    let biases: BTreeMap<String, f64> = [
        ("CHC.ever", 1.2),
        ("CHC.non", 1.5),
        ("HONE.ever", 0.6),
        ("HONE.non", 0.9),
        ("JAILS.ever", 1.8),
        ("JAILS.non", 1.3),
        ("STD.ever", 0.8),
        ("STD.cur", 0.4),
        ("STD.ex", -0.5),
        ("STD.non", 1.0),
        ("RISK.cur", 0.7),
        ("RISK.ex", -0.6),
        ("RISK.non", 1.1),
        ("NHBS.cur", -0.5),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();

    let mut design = Vec::new();
    for a in ages {
        design.push(row("CHS", "rho_ever", a, 400, false));
        design.push(row("HANES", "rho_ever", a, 3000, false));
        design.push(row("HANES", "pi_non", a, 3000, false));
        design.push(row("CHC", "rho_ever", a, 800, true));
        design.push(row("CHC", "pi_non", a, 800, true));
        design.push(row("HONE", "rho_ever", a, 600, true));
        design.push(row("HONE", "pi_non", a, 600, true));
        design.push(row("STD", "rho_ever", a, 1500, true));
        design.push(row("STD", "pi_cur", a, 60, true));
        design.push(row("STD", "pi_ex", a, 100, true));
        design.push(row("STD", "pi_non", a, 1400, true));
        design.push(row("RISK", "rho_cur", a, 500, true));
        design.push(row("RISK", "rho_ex", a, 500, true));
        design.push(row("RISK", "pi_non", a, 300, true));
        for t in 0..7 {
            for d in 0..=t {
                design.push(DesignRow {
                    duration_cat: TimeCategoryScheme::DURATION.label(d),
                    tss_cat: TimeCategoryScheme::TSS.label(t),
                    ..row("RISK", "pi_ever_cell", a, 40, false)
                });
            }
            design.push(DesignRow { tss_cat: TimeCategoryScheme::TSS.label(t), ..row("NHBS", "pi_cur_tss", a, 50, true) });
        }
        for kind in ["f_tss_cur", "f_tss_ex", "f_aafu_cur", "f_aafu_ex", "f_d_ex"] {
            design.push(row("RISK", kind, a, 600, false));
        }
    }
    design.push(row("JAILS", "rho_ever", "30-39", 1000, true));
    design.push(row("JAILS", "pi_non", "30-39", 1000, true));
    design.push(row("NDRI", "rho_cur", "20-59", 20000, false));
    design.push(row("NSDUH", "rho_cur", "30-49", 15000, false));
    design.push(row("NSDUH", "rho_ex", "30-49", 15000, false));
    for kind in ["f_d_ex", "f_tss_ever", "f_aafu_ever"] {
        design.push(row("NSDUH", kind, "", 400, false));
    }

    let mut nsduh = SourceMeta {
        id: "NSDUH".into(),
        description: "national household drug-use survey".into(),
        level: GeographicLevel::National,
        ..Default::default()
    };
    nsduh.group_multipliers.insert(RiskGroup::Current.to_string(), 0.8);
    nsduh.group_multipliers.insert(RiskGroup::Ex.to_string(), 0.85);
    let mut sources = vec![nsduh];
    for (id, desc) in [
        ("CHS", "community health survey"),
        ("HANES", "health and nutrition examination survey"),
        ("CHC", "community health centre testing"),
        ("HONE", "hepatitis outreach testing"),
        ("JAILS", "jail intake screening"),
        ("NDRI", "drug treatment admissions"),
        ("RISK", "injector risk-behaviour study"),
        ("STD", "sexual health clinic screening"),
        ("NHBS", "behavioural surveillance of injectors"),
    ] {
        sources.push(SourceMeta { description: desc.into(), ..SourceMeta::city(id) });
    }
    Scenario {
        regression,
        history,
        census: *CensusTable::reference().populations(),
        biases,
        sources,
        design,
    }
}

/// Random history simplexes with a Dirichlet(`concentration`) draw per
/// variable, for oracle sweeps.
pub fn random_history<R: Rng>(rng: &mut R, concentration: f64) -> Result<DrugHistory<f64>> {
    let g = rand_distr::Gamma::new(concentration, 1.0).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut draw = |k: usize| {
        let v: Vec<f64> = (0..k).map(|_| g.sample(&mut *rng)).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let (d, t, a) = (draw(7), draw(7), draw(10));
    // Rounding may leave the sum off by an ulp or two; fold it into the last
    // category.
    let fix = |mut v: Vec<f64>| {
        let s: f64 = v.iter().sum();
        *v.last_mut().expect("non-empty") += 1.0 - s;
        v
    };
    DrugHistory::new(fix(d), fix(t), fix(a), YearGrid::default())
}
