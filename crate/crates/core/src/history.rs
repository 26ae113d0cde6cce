//! Cessation probability and status-conditional drug-use-history
//! distributions.
//!
//! A cross-section of injectors over-represents long careers among current
//! injectors and short careers among those who have stopped. Everything here
//! follows from one probability model: among ever-injectors, duration `D`,
//! time since starting `TSS` and age at first use `AAFU` are independent with
//! the [`DrugHistory`] marginals, age is `AAFU + TSS`, and a person is an
//! ex-injector exactly when `D < TSS`. Conditioning on an age band restricts
//! `(TSS, AAFU)` to pairs whose sum falls in the band; the band window for a
//! given `TSS = t` is
//!
//! ```text
//! W_a(t) = F_AAFU(a_hi - t) - F_AAFU(a_lo - 1 - t)
//! ```
//!
//! and the cessation probability is
//!
//! ```text
//! kappa_a = sum_t P(D < t) f_TSS(t) W_a(t) / sum_t f_TSS(t) W_a(t)
//! ```
//!
//! Cdf convention: `F(t) = P(X <= t)`, and `P(X < t) = F(t - 1)` on the
//! integer grid.

use crate::error::{Error, Result};
use crate::num::{stable_sum, Scalar};
use crate::params::DrugHistory;
use crate::strata::{AgeGroup, TimeCategoryScheme, AGE_GROUPS};

/// Which ages a history computation conditions on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    Band(AgeGroup),
    /// No age restriction (`W = 1`).
    Unrestricted,
}

/// History distributions conditioned on one age window.
#[derive(Clone, Debug)]
pub struct BandHistory<'h, T> {
    history: &'h DrugHistory<T>,
    window: Window,
    /// Normalising constant `sum_t f_TSS(t) W(t)`.
    mass: T,
    /// `f_TSS|ever,a(t)`, the time-since-start pmf within the window.
    tss_ever: Vec<T>,
    /// `P(D < t)`.
    d_before: Vec<T>,
    /// `P(D >= t)`.
    d_from: Vec<T>,
    kappa: T,
    one_minus_kappa: T,
}

fn cdf_at<T: Scalar>(cdf: &[T], x: i64) -> T {
    if x < 0 {
        T::zero()
    } else if x as usize >= cdf.len() {
        T::one()
    } else {
        cdf[x as usize]
    }
}

fn cumulative<T: Scalar>(pmf: &[T]) -> Vec<T> {
    let mut acc = T::zero();
    pmf.iter()
        .map(|&p| {
            acc = acc + p;
            acc
        })
        .collect()
}

impl<'h, T: Scalar> BandHistory<'h, T> {
    pub fn new(history: &'h DrugHistory<T>, window: Window) -> Result<Self> {
        let f_tss = history.tss_yearly();
        let f_d = history.duration_yearly();
        let n = f_tss.len();

        let weights: Vec<T> = match window {
            Window::Unrestricted => vec![T::one(); n],
            Window::Band(a) => {
                let f_aafu = cumulative(history.aafu_yearly());
                (0..n as i64)
                    .map(|t| {
                        cdf_at(&f_aafu, a.upper() as i64 - t) - cdf_at(&f_aafu, a.lower() as i64 - 1 - t)
                    })
                    .collect()
            }
        };
        let unnorm: Vec<T> = f_tss.iter().zip(&weights).map(|(&f, &w)| f * w).collect();
        let mass = stable_sum(unnorm.iter().copied());
        if !(mass > T::zero()) {
            return Err(Error::DegenerateStratum(format!("no feasible careers in window {window:?}")));
        }
        let tss_ever: Vec<T> = unnorm.iter().map(|&u| u / mass).collect();

        // P(D < t) and P(D >= t), both summed directly so neither loses
        // precision when the other is close to 1.
        let mut d_before = vec![T::zero(); n];
        let mut acc = T::zero();
        for t in 0..n {
            d_before[t] = acc;
            acc = acc + f_d.get(t).copied().unwrap_or_else(T::zero);
        }
        let mut d_from = vec![T::zero(); n];
        let mut tail = stable_sum(f_d.iter().skip(n).copied());
        for t in (0..n).rev() {
            tail = tail + f_d.get(t).copied().unwrap_or_else(T::zero);
            d_from[t] = tail;
        }

        let kappa = stable_sum(tss_ever.iter().zip(&d_before).map(|(&p, &f)| p * f));
        let one_minus_kappa = stable_sum(tss_ever.iter().zip(&d_from).map(|(&p, &s)| p * s));
        Ok(BandHistory { history, window, mass, tss_ever, d_before, d_from, kappa, one_minus_kappa })
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Probability that an ever-injector in the window has stopped injecting.
    pub fn kappa(&self) -> T {
        self.kappa
    }

    /// `1 - kappa`, summed directly.
    pub fn one_minus_kappa(&self) -> T {
        self.one_minus_kappa
    }

    pub fn tss_given_ever(&self) -> &[T] {
        &self.tss_ever
    }

    /// `P(D < t)` for `t` on the grid.
    pub fn duration_before(&self) -> &[T] {
        &self.d_before
    }

    fn require_ex(&self) -> Result<()> {
        if self.kappa > T::zero() {
            Ok(())
        } else {
            Err(Error::DegenerateStratum(format!("kappa = 0 in window {:?}; no ex-injectors", self.window)))
        }
    }

    fn require_current(&self) -> Result<()> {
        if self.one_minus_kappa > T::zero() {
            Ok(())
        } else {
            Err(Error::DegenerateStratum(format!("kappa = 1 in window {:?}; no current injectors", self.window)))
        }
    }

    /// `f_D|ex,a(l) = f_D(l) P(TSS_a > l) / kappa`.
    pub fn duration_given_ex(&self) -> Result<Vec<T>> {
        self.require_ex()?;
        let f_d = self.history.duration_yearly();
        let mut tss_above = vec![T::zero(); f_d.len()];
        let mut tail = T::zero();
        for l in (0..f_d.len()).rev() {
            tss_above[l] = tail;
            tail = tail + self.tss_ever.get(l).copied().unwrap_or_else(T::zero);
        }
        Ok(f_d.iter().zip(&tss_above).map(|(&f, &s)| f * s / self.kappa).collect())
    }

    /// `f_TSS|cur,a(t) = f_TSS|ever,a(t) P(D >= t) / (1 - kappa)`.
    pub fn tss_given_current(&self) -> Result<Vec<T>> {
        self.require_current()?;
        Ok(self.tss_ever.iter().zip(&self.d_from).map(|(&p, &s)| p * s / self.one_minus_kappa).collect())
    }

    /// `f_TSS|ex,a(t) = f_TSS|ever,a(t) P(D < t) / kappa`.
    pub fn tss_given_ex(&self) -> Result<Vec<T>> {
        self.require_ex()?;
        Ok(self.tss_ever.iter().zip(&self.d_before).map(|(&p, &f)| p * f / self.kappa).collect())
    }

    /// Sums `f_AAFU(u) f_TSS(t) g(t)` over window-feasible `t` for every `u`.
    fn aafu_weighted(&self, g: impl Fn(usize) -> T) -> Vec<T> {
        let f_aafu = self.history.aafu_yearly();
        let f_tss = self.history.tss_yearly();
        match self.window {
            Window::Unrestricted => {
                let total = stable_sum(self.tss_ever.iter().enumerate().map(|(t, &p)| p * g(t)));
                f_aafu.iter().map(|&f| f * total).collect()
            }
            Window::Band(a) => f_aafu
                .iter()
                .enumerate()
                .map(|(u, &fu)| {
                    if fu == T::zero() {
                        return T::zero();
                    }
                    let lo = (a.lower() as i64 - u as i64).max(0) as usize;
                    let hi = (a.upper() as i64 - u as i64).min(f_tss.len() as i64 - 1);
                    if hi < lo as i64 {
                        return T::zero();
                    }
                    let s = stable_sum((lo..=hi as usize).map(|t| f_tss[t] * g(t)));
                    fu * s / self.mass
                })
                .collect(),
        }
    }

    /// Age-at-first-use pmf of ever-injectors in the window.
    pub fn aafu_given_ever(&self) -> Vec<T> {
        self.aafu_weighted(|_| T::one())
    }

    /// `f_AAFU|cur,a(a - t) = f_AAFU|ever,a(a - t) P(D >= t) / (1 - kappa)`,
    /// summed over the single-year ages in the window.
    pub fn aafu_given_current(&self) -> Result<Vec<T>> {
        self.require_current()?;
        let d_from = &self.d_from;
        let v = self.aafu_weighted(|t| d_from[t]);
        Ok(v.into_iter().map(|x| x / self.one_minus_kappa).collect())
    }

    /// `f_AAFU|ex,a(a - t) = f_AAFU|ever,a(a - t) P(D < t) / kappa`.
    pub fn aafu_given_ex(&self) -> Result<Vec<T>> {
        self.require_ex()?;
        let d_before = &self.d_before;
        let v = self.aafu_weighted(|t| d_before[t]);
        Ok(v.into_iter().map(|x| x / self.kappa).collect())
    }
}

/// Cessation probability for an age band.
pub fn kappa_ex<T: Scalar>(a: AgeGroup, history: &DrugHistory<T>) -> Result<T> {
    Ok(BandHistory::new(history, Window::Band(a))?.kappa())
}

/// Status-conditional duration and time-since-start distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalHistory<T> {
    pub kappa: T,
    pub duration_given_ex: Vec<T>,
    pub tss_given_current: Vec<T>,
    pub tss_given_ex: Vec<T>,
}

pub fn conditional_history<T: Scalar>(history: &DrugHistory<T>, window: Window) -> Result<ConditionalHistory<T>> {
    let b = BandHistory::new(history, window)?;
    Ok(ConditionalHistory {
        kappa: b.kappa(),
        duration_given_ex: b.duration_given_ex()?,
        tss_given_current: b.tss_given_current()?,
        tss_given_ex: b.tss_given_ex()?,
    })
}

/// Status-conditional age-at-first-use distributions for a band.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalAafu<T> {
    pub current: Vec<T>,
    pub ex: Vec<T>,
}

pub fn conditional_aafu<T: Scalar>(history: &DrugHistory<T>, a: AgeGroup) -> Result<ConditionalAafu<T>> {
    let b = BandHistory::new(history, Window::Band(a))?;
    Ok(ConditionalAafu { current: b.aafu_given_current()?, ex: b.aafu_given_ex()? })
}

const D_CATS: usize = 7;
const AAFU_CATS: usize = 10;

/// Category-level summaries of one band's conditionals. `None` marks a side
/// that is undefined because kappa is 0 or 1.
#[derive(Clone, Debug)]
pub struct BandSummary<T> {
    pub kappa: T,
    /// `P(TSS in c | current, a)`, also the weights of the current-injector
    /// prevalence sum since current injectors have `d = tss`.
    pub current_tss: Option<[T; D_CATS]>,
    pub current_aafu: Option<[T; AAFU_CATS]>,
    /// `P(D in d, TSS in c | ex, a)` indexed `[d][c]`.
    pub ex_joint: Option<[[T; D_CATS]; D_CATS]>,
    pub ex_aafu: Option<[T; AAFU_CATS]>,
    pub ever_tss: [T; D_CATS],
    pub ever_aafu: [T; AAFU_CATS],
}

fn to_array<const N: usize, T: Scalar>(v: Vec<T>) -> [T; N] {
    let mut out = [T::zero(); N];
    out.copy_from_slice(&v[..N]);
    out
}

impl<T: Scalar> BandSummary<T> {
    pub fn new(history: &DrugHistory<T>, a: AgeGroup) -> Result<Self> {
        let b = BandHistory::new(history, Window::Band(a))?;
        let tss_scheme = TimeCategoryScheme::TSS;
        let aafu_scheme = TimeCategoryScheme::AAFU;
        let current_tss = b.tss_given_current().ok().map(|v| to_array(tss_scheme.aggregate(&v)));
        let current_aafu = b.aafu_given_current().ok().map(|v| to_array(aafu_scheme.aggregate(&v)));
        let ex_aafu = b.aafu_given_ex().ok().map(|v| to_array(aafu_scheme.aggregate(&v)));
        let ex_joint = match b.tss_given_ex() {
            Ok(tss_ex) => {
                let f_d = history.duration_yearly();
                let mut joint = [[T::zero(); D_CATS]; D_CATS];
                for (t, &w) in tss_ex.iter().enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    let norm = b.d_before[t];
                    let tc = tss_scheme.year_to_category(t as i64)?;
                    for (l, &fl) in f_d.iter().enumerate().take(t) {
                        let dc = TimeCategoryScheme::DURATION.year_to_category(l as i64)?;
                        joint[dc][tc] = joint[dc][tc] + w * fl / norm;
                    }
                }
                Some(joint)
            }
            Err(_) => None,
        };
        Ok(BandSummary {
            kappa: b.kappa(),
            current_tss,
            current_aafu,
            ex_joint,
            ex_aafu,
            ever_tss: to_array(tss_scheme.aggregate(b.tss_given_ever())),
            ever_aafu: to_array(aafu_scheme.aggregate(&b.aafu_given_ever())),
        })
    }

    pub fn ex_duration(&self) -> Option<[T; D_CATS]> {
        self.ex_joint.map(|j| {
            let mut out = [T::zero(); D_CATS];
            for (d, row) in j.iter().enumerate() {
                out[d] = stable_sum(row.iter().copied());
            }
            out
        })
    }

    pub fn ex_tss(&self) -> Option<[T; D_CATS]> {
        self.ex_joint.map(|j| {
            let mut out = [T::zero(); D_CATS];
            for row in &j {
                for (c, &v) in row.iter().enumerate() {
                    out[c] = out[c] + v;
                }
            }
            out
        })
    }
}

/// Per-band category summaries for a history, computed once per history
/// draw and shared by every likelihood evaluation that leaves the history
/// unchanged.
#[derive(Clone, Debug)]
pub struct HistoryCache<T> {
    history: DrugHistory<T>,
    bands: [BandSummary<T>; AGE_GROUPS],
}

impl<T: Scalar> HistoryCache<T> {
    pub fn new(history: DrugHistory<T>) -> Result<Self> {
        let bands = [
            BandSummary::new(&history, AgeGroup::ALL[0])?,
            BandSummary::new(&history, AgeGroup::ALL[1])?,
            BandSummary::new(&history, AgeGroup::ALL[2])?,
            BandSummary::new(&history, AgeGroup::ALL[3])?,
        ];
        Ok(HistoryCache { history, bands })
    }

    pub fn history(&self) -> &DrugHistory<T> {
        &self.history
    }

    pub fn band(&self, a: AgeGroup) -> &BandSummary<T> {
        &self.bands[a.index()]
    }

    pub fn kappa(&self, a: AgeGroup) -> T {
        self.bands[a.index()].kappa
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strata::YearGrid;

    fn history(d: [f64; 7], tss: [f64; 7], aafu: [f64; 10]) -> DrugHistory<f64> {
        DrugHistory::new(d.to_vec(), tss.to_vec(), aafu.to_vec(), YearGrid::default()).unwrap()
    }

    fn generic() -> DrugHistory<f64> {
        history(
            [0.10, 0.25, 0.22, 0.15, 0.10, 0.12, 0.06],
            [0.03, 0.10, 0.15, 0.17, 0.15, 0.22, 0.18],
            [0.02, 0.06, 0.20, 0.25, 0.18, 0.12, 0.08, 0.05, 0.03, 0.01],
        )
    }

    #[test]
    fn no_cessation_mass_gives_zero_kappa() {
        // All duration mass in the last band: P(D < t) = 0 for t <= 30.
        // TSS restricted below 30 so no career could have ended.
        let h = history(
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            [0.2, 0.2, 0.2, 0.2, 0.2, 0.0, 0.0],
            [0.1; 10],
        );
        for a in AgeGroup::ALL {
            assert_eq!(kappa_ex(a, &h).unwrap(), 0.0);
        }
        let b = BandHistory::new(&h, Window::Band(AgeGroup::ALL[1])).unwrap();
        assert!(matches!(b.tss_given_ex(), Err(Error::DegenerateStratum(_))));
        assert!(matches!(b.aafu_given_ex(), Err(Error::DegenerateStratum(_))));
        // No length-bias correction is needed for current injectors.
        let cur = b.tss_given_current().unwrap();
        for (x, y) in cur.iter().zip(b.tss_given_ever()) {
            assert!((x - y).abs() < 1e-15);
        }
        let aafu_cur = b.aafu_given_current().unwrap();
        for (x, y) in aafu_cur.iter().zip(b.aafu_given_ever()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn immediate_cessation_gives_unit_kappa() {
        let h = history(
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.3, 0.3, 0.2, 0.1, 0.05, 0.05],
            [0.1; 10],
        );
        for a in AgeGroup::ALL {
            assert_eq!(kappa_ex(a, &h).unwrap(), 1.0);
        }
        let b = BandHistory::new(&h, Window::Band(AgeGroup::ALL[0])).unwrap();
        assert!(b.tss_given_current().is_err());
        assert!(b.tss_given_ex().is_ok());
    }

    #[test]
    fn infeasible_window_is_degenerate() {
        // AAFU at 51-55 and TSS >= 10 puts every age above 59.
        let mut aafu = [0.0; 10];
        aafu[9] = 1.0;
        let h = history([0.1, 0.2, 0.2, 0.2, 0.1, 0.1, 0.1], [0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0], aafu);
        assert!(matches!(kappa_ex(AgeGroup::ALL[0], &h), Err(Error::DegenerateStratum(_))));
    }

    #[test]
    fn conditionals_sum_to_one_without_window() {
        let h = generic();
        let c = conditional_history(&h, Window::Unrestricted).unwrap();
        for v in [&c.duration_given_ex, &c.tss_given_current, &c.tss_given_ex] {
            let s: f64 = v.iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "sum {s}");
        }
        // Unrestricted kappa is P(D < TSS) under independence.
        let (fd, ft) = (h.duration_yearly(), h.tss_yearly());
        let mut brute = 0.0;
        for (l, &pl) in fd.iter().enumerate() {
            for (t, &pt) in ft.iter().enumerate() {
                if l < t {
                    brute += pl * pt;
                }
            }
        }
        assert!((c.kappa - brute).abs() < 1e-14);
    }

    #[test]
    fn mixture_identities_per_band() {
        let h = generic();
        for a in AgeGroup::ALL {
            let b = BandHistory::new(&h, Window::Band(a)).unwrap();
            let k = b.kappa();
            assert!((k + b.one_minus_kappa() - 1.0).abs() < 1e-13);
            let (cur, ex) = (b.tss_given_current().unwrap(), b.tss_given_ex().unwrap());
            for t in 0..cur.len() {
                assert!((k * ex[t] + (1.0 - k) * cur[t] - b.tss_given_ever()[t]).abs() < 1e-14);
            }
            let (ac, ae, ev) = (b.aafu_given_current().unwrap(), b.aafu_given_ex().unwrap(), b.aafu_given_ever());
            for u in 0..ac.len() {
                assert!((k * ae[u] + (1.0 - k) * ac[u] - ev[u]).abs() < 1e-14);
            }
            for v in [&cur, &ex, &ac, &ae, &ev, &b.duration_given_ex().unwrap()] {
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kappa_matches_joint_enumeration() {
        // Brute-force enumeration over (D, TSS, AAFU) with age = AAFU + TSS.
        let h = generic();
        let (fd, ft, fa) = (h.duration_yearly(), h.tss_yearly(), h.aafu_yearly());
        for a in AgeGroup::ALL {
            let (mut num, mut den) = (0.0, 0.0);
            for (t, &pt) in ft.iter().enumerate() {
                for (u, &pu) in fa.iter().enumerate() {
                    let age = (t + u) as u32;
                    if age < a.lower() || age > a.upper() {
                        continue;
                    }
                    den += pt * pu;
                    for (l, &pl) in fd.iter().enumerate() {
                        if l < t {
                            num += pl * pt * pu;
                        }
                    }
                }
            }
            assert!((kappa_ex(a, &h).unwrap() - num / den).abs() < 1e-13);
        }
    }

    #[test]
    fn band_summary_is_consistent() {
        let h = generic();
        let cache = HistoryCache::new(h.clone()).unwrap();
        for a in AgeGroup::ALL {
            let s = cache.band(a);
            let b = BandHistory::new(&h, Window::Band(a)).unwrap();
            let d_ex = TimeCategoryScheme::DURATION.aggregate(&b.duration_given_ex().unwrap());
            let t_ex = TimeCategoryScheme::TSS.aggregate(&b.tss_given_ex().unwrap());
            for c in 0..7 {
                assert!((s.ex_duration().unwrap()[c] - d_ex[c]).abs() < 1e-13);
                assert!((s.ex_tss().unwrap()[c] - t_ex[c]).abs() < 1e-13);
            }
            assert_eq!(s.kappa, b.kappa());
        }
    }
}
