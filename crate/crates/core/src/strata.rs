//! Stratification lattice: age bands, injecting-drug-use risk groups, the
//! categorical schemes for drug-use history variables, the yearly grid the
//! convolution sums run over, and census weights.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{lit, stable_sum, to_f64, Scalar};

/// Number of age bands.
pub const AGE_GROUPS: usize = 4;

/// Tolerance for simplex normalisation checks.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Closed ten-year age band; index 3 (50-59) is the regression baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgeGroup(u8);

impl AgeGroup {
    pub const ALL: [AgeGroup; AGE_GROUPS] = [AgeGroup(0), AgeGroup(1), AgeGroup(2), AgeGroup(3)];
    pub const BASELINE: AgeGroup = AgeGroup(3);

    pub fn new(index: usize) -> Result<Self> {
        if index < AGE_GROUPS {
            Ok(AgeGroup(index as u8))
        } else {
            Err(Error::InvalidAgeGroup(format!("index {index}")))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn lower(self) -> u32 {
        20 + 10 * self.0 as u32
    }

    pub fn upper(self) -> u32 {
        self.lower() + 9
    }

    pub fn is_baseline(self) -> bool {
        self == Self::BASELINE
    }

    pub fn from_bounds(lower: u32, upper: u32) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.lower() == lower && a.upper() == upper)
            .ok_or_else(|| Error::InvalidAgeGroup(format!("{lower}-{upper}")))
    }

    /// Parses a band label such as `30-39`, or a contiguous range of bands
    /// such as `30-49` or `20-59`.
    pub fn parse_range(label: &str) -> Result<Vec<AgeGroup>> {
        let (lo, hi) = label
            .trim()
            .split_once('-')
            .ok_or_else(|| Error::InvalidAgeGroup(label.to_string()))?;
        let lo: u32 = lo.trim().parse().map_err(|_| Error::InvalidAgeGroup(label.to_string()))?;
        let hi: u32 = hi.trim().parse().map_err(|_| Error::InvalidAgeGroup(label.to_string()))?;
        let first = Self::ALL.iter().position(|a| a.lower() == lo);
        let last = Self::ALL.iter().position(|a| a.upper() == hi);
        match (first, last) {
            (Some(f), Some(l)) if f <= l => Ok(Self::ALL[f..=l].to_vec()),
            _ => Err(Error::InvalidAgeGroup(label.to_string())),
        }
    }

    /// Label for a contiguous set of bands (`20-29`, `30-49`, ...).
    pub fn range_label(ages: &[AgeGroup]) -> String {
        match (ages.iter().min(), ages.iter().max()) {
            (Some(lo), Some(hi)) => format!("{}-{}", lo.lower(), hi.upper()),
            _ => String::new(),
        }
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lower(), self.upper())
    }
}

impl FromStr for AgeGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match AgeGroup::parse_range(s)?.as_slice() {
            [a] => Ok(*a),
            _ => Err(Error::InvalidAgeGroup(s.to_string())),
        }
    }
}

impl Serialize for AgeGroup {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgeGroup {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Injecting-drug-use risk group. `Ever` is the union of `Current` and `Ex`
/// and is only used to label observations and bias terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskGroup {
    Current,
    Ex,
    Non,
    Ever,
}

impl RiskGroup {
    /// The three mutually exclusive population strata.
    pub const STRATA: [RiskGroup; 3] = [RiskGroup::Current, RiskGroup::Ex, RiskGroup::Non];

    pub fn is_stratum(self) -> bool {
        self != RiskGroup::Ever
    }

    pub fn short(self) -> &'static str {
        match self {
            RiskGroup::Current => "cur",
            RiskGroup::Ex => "ex",
            RiskGroup::Non => "non",
            RiskGroup::Ever => "ever",
        }
    }

    /// Expands `Ever` into its two strata.
    pub fn strata(self) -> &'static [RiskGroup] {
        match self {
            RiskGroup::Current => &[RiskGroup::Current],
            RiskGroup::Ex => &[RiskGroup::Ex],
            RiskGroup::Non => &[RiskGroup::Non],
            RiskGroup::Ever => &[RiskGroup::Current, RiskGroup::Ex],
        }
    }
}

impl fmt::Display for RiskGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for RiskGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cur" | "current" => Ok(RiskGroup::Current),
            "ex" => Ok(RiskGroup::Ex),
            "non" => Ok(RiskGroup::Non),
            "ever" => Ok(RiskGroup::Ever),
            other => Err(Error::Invalid(format!("unknown risk group '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Duration,
    Tss,
    Aafu,
}

const DURATION_BOUNDS: [(u32, u32); 7] = [(0, 0), (1, 4), (5, 9), (10, 14), (15, 19), (20, 29), (30, 45)];
const AAFU_BOUNDS: [(u32, u32); 10] = [
    (8, 9),
    (10, 14),
    (15, 19),
    (20, 24),
    (25, 29),
    (30, 34),
    (35, 39),
    (40, 44),
    (45, 50),
    (51, 55),
];

/// Ordered, disjoint integer-year categories for one history variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeCategoryScheme {
    kind: SchemeKind,
    bounds: &'static [(u32, u32)],
}

impl TimeCategoryScheme {
    pub const DURATION: TimeCategoryScheme = TimeCategoryScheme { kind: SchemeKind::Duration, bounds: &DURATION_BOUNDS };
    pub const TSS: TimeCategoryScheme = TimeCategoryScheme { kind: SchemeKind::Tss, bounds: &DURATION_BOUNDS };
    pub const AAFU: TimeCategoryScheme = TimeCategoryScheme { kind: SchemeKind::Aafu, bounds: &AAFU_BOUNDS };

    pub fn of(kind: SchemeKind) -> Self {
        match kind {
            SchemeKind::Duration => Self::DURATION,
            SchemeKind::Tss => Self::TSS,
            SchemeKind::Aafu => Self::AAFU,
        }
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    /// The regression baseline is the last category.
    pub fn baseline(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn bounds(&self, index: usize) -> Result<(u32, u32)> {
        self.bounds
            .get(index)
            .copied()
            .ok_or(Error::InvalidCategory { index, len: self.len() })
    }

    pub fn all_bounds(&self) -> &'static [(u32, u32)] {
        self.bounds
    }

    pub fn max_year(&self) -> u32 {
        self.bounds[self.bounds.len() - 1].1
    }

    pub fn label(&self, index: usize) -> String {
        match self.bounds.get(index) {
            Some(&(0, 0)) => "<1".to_string(),
            Some(&(lo, hi)) => format!("{lo}-{hi}"),
            None => format!("#{index}"),
        }
    }

    /// Accepts a category label (`<1`, `5-9`) or a zero-based index.
    pub fn parse_category(&self, s: &str) -> Result<usize> {
        let s = s.trim();
        if let Ok(i) = s.parse::<usize>() {
            return if i < self.len() { Ok(i) } else { Err(Error::InvalidCategory { index: i, len: self.len() }) };
        }
        (0..self.len())
            .find(|&i| self.label(i) == s)
            .ok_or_else(|| Error::Invalid(format!("unknown {:?} category '{s}'", self.kind)))
    }

    /// Category containing year `t`; years past the last bound fall in the
    /// last (baseline) category.
    pub fn year_to_category(&self, t: i64) -> Result<usize> {
        if t < 0 {
            return Err(Error::YearOutOfScheme(t));
        }
        let t = t as u64;
        if t > self.max_year() as u64 {
            return Ok(self.baseline());
        }
        self.bounds
            .iter()
            .position(|&(lo, hi)| t >= lo as u64 && t <= hi as u64)
            .ok_or(Error::YearOutOfScheme(t as i64))
    }

    /// Re-aggregates a yearly pmf into category masses. Years beyond the last
    /// bound are added to the last category.
    pub fn aggregate<T: Scalar>(&self, yearly: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.len()];
        for (t, &p) in yearly.iter().enumerate() {
            if let Ok(c) = self.year_to_category(t as i64) {
                out[c] = out[c] + p;
            }
        }
        out
    }
}

/// Integer-year grid `0..=t_max` over which the yearly convolution sums run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearGrid {
    t_max: u32,
}

impl Default for YearGrid {
    fn default() -> Self {
        YearGrid { t_max: 45 }
    }
}

impl YearGrid {
    pub fn new(t_max: u32) -> Result<Self> {
        let min = TimeCategoryScheme::DURATION.max_year();
        if t_max < min {
            return Err(Error::Invalid(format!("t_max {t_max} below the last duration bound {min}")));
        }
        Ok(YearGrid { t_max })
    }

    pub fn t_max(&self) -> u32 {
        self.t_max
    }

    /// Length of the yearly vector used for a scheme on this grid.
    pub fn yearly_len(&self, scheme: &TimeCategoryScheme) -> usize {
        self.t_max.max(scheme.max_year()) as usize + 1
    }
}

/// Checks that `mass` is a simplex matching `scheme`.
pub fn check_simplex<T: Scalar>(mass: &[T], expected_len: usize) -> Result<()> {
    if mass.len() != expected_len {
        return Err(Error::LengthMismatch { expected: expected_len, got: mass.len() });
    }
    for (i, &m) in mass.iter().enumerate() {
        if !(m >= T::zero()) {
            return Err(Error::NegativeMass { index: i, value: to_f64(m) });
        }
    }
    let sum = stable_sum(mass.iter().copied());
    if (sum - T::one()).abs() > lit(SIMPLEX_TOL) {
        return Err(Error::NotNormalized { sum: to_f64(sum) });
    }
    Ok(())
}

/// Spreads category masses uniformly over each category's integer years.
pub fn expand_to_yearly<T: Scalar>(mass: &[T], scheme: &TimeCategoryScheme, grid: &YearGrid) -> Result<Vec<T>> {
    check_simplex(mass, scheme.len())?;
    Ok(expand_unchecked(mass, scheme, grid))
}

pub(crate) fn expand_unchecked<T: Scalar>(mass: &[T], scheme: &TimeCategoryScheme, grid: &YearGrid) -> Vec<T> {
    let mut yearly = vec![T::zero(); grid.yearly_len(scheme)];
    for (&m, &(lo, hi)) in mass.iter().zip(scheme.all_bounds()) {
        let share = m / lit::<T>((hi - lo + 1) as f64);
        for y in &mut yearly[lo as usize..=hi as usize] {
            *y = share;
        }
    }
    yearly
}

/// Census population counts per age band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusTable {
    population: [f64; AGE_GROUPS],
}

#[derive(Debug, Serialize, Deserialize)]
struct CensusRow {
    age_group_lower: u32,
    age_group_upper: u32,
    population: f64,
}

impl CensusTable {
    pub fn new(population: [f64; AGE_GROUPS]) -> Result<Self> {
        if let Some(p) = population.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::Invalid(format!("census population must be positive, got {p}")));
        }
        Ok(CensusTable { population })
    }

    /// Census counts of the city population aged 20-59 used throughout the
    /// examples and tests.
    pub fn reference() -> Self {
        CensusTable { population: [1_372_775.0, 1_249_662.0, 1_132_972.0, 1_017_219.0] }
    }

    pub fn population(&self, a: AgeGroup) -> f64 {
        self.population[a.index()]
    }

    pub fn populations(&self) -> &[f64; AGE_GROUPS] {
        &self.population
    }

    pub fn total(&self) -> f64 {
        self.population.iter().sum()
    }

    pub fn weights<T: Scalar>(&self) -> [T; AGE_GROUPS] {
        self.population.map(lit)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut pop = [None; AGE_GROUPS];
        for (i, row) in rdr.deserialize::<CensusRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::InvalidRecord { line, message: e.to_string() })?;
            let a = AgeGroup::from_bounds(row.age_group_lower, row.age_group_upper)
                .map_err(|e| Error::InvalidRecord { line, message: e.to_string() })?;
            if pop[a.index()].is_some() {
                return Err(Error::InvalidRecord { line, message: format!("duplicate age group {a}") });
            }
            if !(row.population > 0.0) {
                return Err(Error::InvalidRecord { line, message: "population must be positive".into() });
            }
            pop[a.index()] = Some(row.population);
        }
        let mut population = [0.0; AGE_GROUPS];
        for a in AgeGroup::ALL {
            population[a.index()] =
                pop[a.index()].ok_or_else(|| Error::Invalid(format!("census table is missing age group {a}")))?;
        }
        CensusTable::new(population)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for a in AgeGroup::ALL {
            w.serialize(CensusRow {
                age_group_lower: a.lower(),
                age_group_upper: a.upper(),
                population: self.population(a),
            })?;
        }
        w.flush()?;
        Ok(())
    }
}
