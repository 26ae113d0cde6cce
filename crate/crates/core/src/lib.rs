//! Bayesian multi-source evidence synthesis for HCV prevalence stratified by
//! age and injecting-drug-use status.

pub mod diagnostics;
pub mod error;
pub mod history;
pub mod inference;
pub mod num;
pub mod observation;
pub mod params;
pub mod quantities;
pub mod strata;
pub mod synthgen;

pub use error::{Error, Result};
pub use history::{kappa_ex, BandHistory, HistoryCache, Window};
pub use params::{DrugHistory, RegressionParams, REGRESSION_DIM};
pub use strata::{AgeGroup, CensusTable, RiskGroup, SchemeKind, TimeCategoryScheme, YearGrid};

pub type Regression = RegressionParams<f64>;
pub type History = DrugHistory<f64>;
pub type Quantities = quantities::StratifiedQuantitySet<f64>;
