//! Model parameters: logistic-regression coefficients and the categorical
//! drug-use-history distributions among ever-injectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{inv_logit, Scalar};
use crate::strata::{check_simplex, expand_unchecked, AgeGroup, TimeCategoryScheme, YearGrid};

/// Number of scalar regression coefficients.
pub const REGRESSION_DIM: usize = 24;

/// Logistic-regression coefficients. Age offsets are indexed by age band
/// (20-29, 30-39, 40-49; 50-59 is the baseline); duration and time-since-start
/// offsets by category (the last category, 30-45 years, is the baseline).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct RegressionParams<T> {
    /// Ever-injecting proportion intercept.
    pub alpha0: T,
    pub alpha1: [T; 3],
    /// Non-injector prevalence intercept.
    pub gamma0: T,
    pub gamma1: [T; 3],
    /// Ever-injector prevalence intercept.
    pub delta0: T,
    pub delta1: [T; 3],
    pub delta2: [T; 6],
    pub delta3: [T; 6],
}

impl<T: Scalar> Default for RegressionParams<T> {
    fn default() -> Self {
        RegressionParams {
            alpha0: T::zero(),
            alpha1: [T::zero(); 3],
            gamma0: T::zero(),
            gamma1: [T::zero(); 3],
            delta0: T::zero(),
            delta1: [T::zero(); 3],
            delta2: [T::zero(); 6],
            delta3: [T::zero(); 6],
        }
    }
}

fn age_offset<T: Scalar>(coef: &[T; 3], a: AgeGroup) -> T {
    if a.is_baseline() {
        T::zero()
    } else {
        coef[a.index()]
    }
}

fn category_offset<T: Scalar>(coef: &[T; 6], scheme: &TimeCategoryScheme, c: usize) -> Result<T> {
    if c >= scheme.len() {
        return Err(Error::InvalidCategory { index: c, len: scheme.len() });
    }
    Ok(if c == scheme.baseline() { T::zero() } else { coef[c] })
}

impl<T: Scalar> RegressionParams<T> {
    /// Proportion of the age band that has ever injected.
    pub fn rho_ever(&self, a: AgeGroup) -> T {
        inv_logit(self.alpha0 + age_offset(&self.alpha1, a))
    }

    /// Prevalence among non-injectors.
    pub fn pi_non(&self, a: AgeGroup) -> T {
        inv_logit(self.gamma0 + age_offset(&self.gamma1, a))
    }

    /// Prevalence among ever-injectors with the given duration and
    /// time-since-start categories.
    pub fn pi_ever_cell(&self, d_cat: usize, tss_cat: usize, a: AgeGroup) -> Result<T> {
        let eta = self.delta0
            + age_offset(&self.delta1, a)
            + category_offset(&self.delta2, &TimeCategoryScheme::DURATION, d_cat)?
            + category_offset(&self.delta3, &TimeCategoryScheme::TSS, tss_cat)?;
        Ok(inv_logit(eta))
    }

    /// Flat view in a fixed order: alpha0, alpha1, gamma0, gamma1, delta0,
    /// delta1, delta2, delta3.
    pub fn to_vec(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(REGRESSION_DIM);
        v.push(self.alpha0);
        v.extend_from_slice(&self.alpha1);
        v.push(self.gamma0);
        v.extend_from_slice(&self.gamma1);
        v.push(self.delta0);
        v.extend_from_slice(&self.delta1);
        v.extend_from_slice(&self.delta2);
        v.extend_from_slice(&self.delta3);
        v
    }

    pub fn from_slice(v: &[T]) -> Result<Self> {
        if v.len() != REGRESSION_DIM {
            return Err(Error::LengthMismatch { expected: REGRESSION_DIM, got: v.len() });
        }
        let arr3 = |s: &[T]| [s[0], s[1], s[2]];
        let arr6 = |s: &[T]| [s[0], s[1], s[2], s[3], s[4], s[5]];
        Ok(RegressionParams {
            alpha0: v[0],
            alpha1: arr3(&v[1..4]),
            gamma0: v[4],
            gamma1: arr3(&v[5..8]),
            delta0: v[8],
            delta1: arr3(&v[9..12]),
            delta2: arr6(&v[12..18]),
            delta3: arr6(&v[18..24]),
        })
    }

    /// Names matching [`to_vec`](Self::to_vec).
    pub fn names() -> Vec<String> {
        let mut n = vec!["alpha0".to_string()];
        n.extend((0..3).map(|i| format!("alpha1.{}", AgeGroup::ALL[i])));
        n.push("gamma0".into());
        n.extend((0..3).map(|i| format!("gamma1.{}", AgeGroup::ALL[i])));
        n.push("delta0".into());
        n.extend((0..3).map(|i| format!("delta1.{}", AgeGroup::ALL[i])));
        n.extend((0..6).map(|i| format!("delta2.{}", TimeCategoryScheme::DURATION.label(i))));
        n.extend((0..6).map(|i| format!("delta3.{}", TimeCategoryScheme::TSS.label(i))));
        n
    }
}

/// Category-level distributions of injecting duration, time since starting
/// and age at first use among ever-injectors, with their yearly expansions.
/// The three variables are independent and age-invariant.
#[derive(Clone, Debug, PartialEq)]
pub struct DrugHistory<T> {
    duration: Vec<T>,
    tss: Vec<T>,
    aafu: Vec<T>,
    grid: YearGrid,
    duration_yearly: Vec<T>,
    tss_yearly: Vec<T>,
    aafu_yearly: Vec<T>,
}

impl<T: Scalar> DrugHistory<T> {
    pub fn new(duration: Vec<T>, tss: Vec<T>, aafu: Vec<T>, grid: YearGrid) -> Result<Self> {
        check_simplex(&duration, TimeCategoryScheme::DURATION.len())?;
        check_simplex(&tss, TimeCategoryScheme::TSS.len())?;
        check_simplex(&aafu, TimeCategoryScheme::AAFU.len())?;
        let duration_yearly = expand_unchecked(&duration, &TimeCategoryScheme::DURATION, &grid);
        let tss_yearly = expand_unchecked(&tss, &TimeCategoryScheme::TSS, &grid);
        let aafu_yearly = expand_unchecked(&aafu, &TimeCategoryScheme::AAFU, &grid);
        Ok(DrugHistory { duration, tss, aafu, grid, duration_yearly, tss_yearly, aafu_yearly })
    }

    /// Uniform masses over every category.
    pub fn uniform(grid: YearGrid) -> Self {
        let u = |k: usize| vec![T::one() / T::from_usize(k).unwrap(); k];
        Self::new(u(7), u(7), u(10), grid).expect("uniform simplexes are valid")
    }

    pub fn duration(&self) -> &[T] {
        &self.duration
    }

    pub fn tss(&self) -> &[T] {
        &self.tss
    }

    pub fn aafu(&self) -> &[T] {
        &self.aafu
    }

    pub fn grid(&self) -> &YearGrid {
        &self.grid
    }

    /// Yearly duration pmf on `0..=t_max`.
    pub fn duration_yearly(&self) -> &[T] {
        &self.duration_yearly
    }

    pub fn tss_yearly(&self) -> &[T] {
        &self.tss_yearly
    }

    /// Yearly age-at-first-use pmf, indexed by age in years.
    pub fn aafu_yearly(&self) -> &[T] {
        &self.aafu_yearly
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::logit;

    #[test]
    fn rho_ever_examples() {
        let p = RegressionParams::<f64>::default();
        for a in AgeGroup::ALL {
            assert_eq!(p.rho_ever(a), 0.5);
            assert_eq!(p.pi_non(a), 0.5);
        }
        let p: RegressionParams<f64> = RegressionParams { alpha0: logit(0.0395), ..Default::default() };
        assert!((p.rho_ever(AgeGroup::BASELINE) - 0.0395).abs() < 1e-15);

        // invlogit(-3.8) = 1 / (1 + e^3.8); e^3.8 = 44.701184493300815...
        let mut p: RegressionParams<f64> = RegressionParams { alpha0: -3.5, ..Default::default() };
        p.alpha1[0] = -0.3;
        let oracle = 1.0 / (1.0 + 44.701_184_493_300_815);
        assert!((p.rho_ever(AgeGroup::ALL[0]) - oracle).abs() < 1e-15);
        assert!((p.rho_ever(AgeGroup::ALL[0]) - 0.021_881).abs() < 1e-6);
        // Baseline age ignores the offset vector.
        assert_eq!(p.rho_ever(AgeGroup::BASELINE), inv_logit(-3.5));
    }

    #[test]
    fn pi_ever_cell_examples() {
        let p = RegressionParams::<f64>::default();
        assert_eq!(p.pi_ever_cell(2, 3, AgeGroup::ALL[1]).unwrap(), 0.5);
        let p = RegressionParams { delta0: -0.7, delta2: [1.0; 6], delta3: [1.0; 6], ..Default::default() };
        assert_eq!(p.pi_ever_cell(6, 6, AgeGroup::BASELINE).unwrap(), inv_logit(-0.7));

        let mut p: RegressionParams<f64> = RegressionParams { delta0: -1.0, ..Default::default() };
        p.delta1[1] = 0.4;
        p.delta2[2] = 0.7;
        p.delta3[3] = -0.2;
        // invlogit(-0.1) = 1/(1+e^0.1), e^0.1 = 1.1051709180756477
        let oracle = 1.0 / (1.0 + 1.105_170_918_075_647_7);
        let v = p.pi_ever_cell(2, 3, AgeGroup::ALL[1]).unwrap();
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - 0.475_021).abs() < 1e-6);
        assert!(matches!(p.pi_ever_cell(7, 0, AgeGroup::ALL[0]), Err(Error::InvalidCategory { .. })));
    }

    #[test]
    fn pi_non_baseline() {
        let mut p = RegressionParams { gamma0: -2.0, ..Default::default() };
        p.gamma1 = [5.0; 3];
        assert_eq!(p.pi_non(AgeGroup::BASELINE), inv_logit(-2.0));
        assert_eq!(p.pi_non(AgeGroup::ALL[0]), inv_logit(3.0));
    }

    #[test]
    fn flat_roundtrip() {
        let v: Vec<f64> = (0..REGRESSION_DIM).map(|i| i as f64 * 0.1).collect();
        let p = RegressionParams::from_slice(&v).unwrap();
        assert_eq!(p.to_vec(), v);
        assert_eq!(RegressionParams::<f64>::names().len(), REGRESSION_DIM);
        assert!(RegressionParams::<f64>::from_slice(&v[1..]).is_err());
    }

    #[test]
    fn history_validates_simplexes() {
        let g = YearGrid::default();
        assert!(DrugHistory::new(vec![1.0 / 7.0; 7], vec![1.0 / 7.0; 7], vec![0.1; 10], g).is_ok());
        assert!(DrugHistory::new(vec![0.2; 7], vec![1.0 / 7.0; 7], vec![0.1; 10], g).is_err());
        assert!(DrugHistory::new(vec![1.0 / 7.0; 7], vec![1.0 / 7.0; 7], vec![0.1; 9], g).is_err());
        let h = DrugHistory::<f64>::uniform(g);
        assert_eq!(h.duration_yearly().len(), 46);
        assert_eq!(h.aafu_yearly().len(), 56);
    }
}
