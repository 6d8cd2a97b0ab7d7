//! Observed firm panels: record and dataset types, validation, and the
//! descriptive summaries (observed-cell proportions, covariate balance).
//!
//! A record carries covariates, the treatment arm, a survival path, and the
//! outcome path. Outcomes are `Option<bool>`: `None` is the truncation
//! sentinel, legal exactly at the periods where the unit is dead.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::strata::{Arm, ObservedCell};

/// Outcome value at one period; `None` means truncated by death.
pub type Outcome = Option<bool>;

/// One unit's observed data.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FirmRecord {
    pub id: String,
    /// Covariate vector of length K.
    pub x: Vec<f64>,
    pub w: Arm,
    /// Survival indicators, length T, non-increasing.
    pub s: Vec<bool>,
    /// Outcomes, length T; `None` iff the matching survival entry is false.
    pub y: Vec<Outcome>,
}

impl FirmRecord {
    pub fn observed_cell(&self) -> ObservedCell {
        ObservedCell::new(self.w, self.s.clone()).expect("validated record has a legal cell")
    }

    /// Last period (1-based) observed alive; zero if dead throughout.
    pub fn alive_horizon(&self) -> usize {
        self.s.iter().rposition(|&alive| alive).map_or(0, |i| i + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    Empty,
    /// Record has the wrong covariate count.
    CovariateLength { id: String, expected: usize, found: usize },
    /// Record has the wrong number of periods in `s` or `y`.
    PeriodLength { id: String, expected: usize, found: usize },
    /// Survival indicators increase over time.
    SurvivalNotAbsorbing { id: String },
    /// Outcome present at a period where the unit is dead.
    OutcomeAfterDeath { id: String, period: usize },
    /// Outcome truncated at a period where the unit is alive.
    TruncatedWhileAlive { id: String, period: usize },
    NonFiniteCovariate { id: String, column: usize },
    DuplicateId { id: String },
    /// One of the arms has no records (overlap sanity check).
    EmptyArm { arm: Arm },
    /// Covariate column has zero variance but standardization was requested.
    ConstantColumn { column: usize },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Empty => write!(f, "dataset has no records"),
            DataError::CovariateLength { id, expected, found } => {
                write!(f, "record {id}: expected {expected} covariates, found {found}")
            }
            DataError::PeriodLength { id, expected, found } => {
                write!(f, "record {id}: expected {expected} periods, found {found}")
            }
            DataError::SurvivalNotAbsorbing { id } => {
                write!(f, "record {id}: survival not absorbing")
            }
            DataError::OutcomeAfterDeath { id, period } => {
                write!(f, "record {id}: outcome present after death at period {period}")
            }
            DataError::TruncatedWhileAlive { id, period } => {
                write!(f, "record {id}: outcome truncated while alive at period {period}")
            }
            DataError::NonFiniteCovariate { id, column } => {
                write!(f, "record {id}: non-finite covariate in column {column}")
            }
            DataError::DuplicateId { id } => write!(f, "duplicate record id {id}"),
            DataError::EmptyArm { arm } => {
                write!(f, "arm {arm} has no records; overlap requires both arms")
            }
            DataError::ConstantColumn { column } => {
                write!(f, "covariate column {column} is constant; cannot standardize")
            }
        }
    }
}

impl core::error::Error for DataError {}

/// A validated panel of firm records sharing K covariates and T periods.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    records: Vec<FirmRecord>,
    covariate_names: Vec<String>,
    periods: usize,
}

impl Dataset {
    /// Validates all per-record invariants plus the overlap sanity check
    /// (each arm non-empty).
    pub fn new(records: Vec<FirmRecord>, covariate_names: Vec<String>) -> Result<Dataset, DataError> {
        let d = Self::new_allowing_empty_arm(records, covariate_names)?;
        for arm in [Arm::Control, Arm::Treated] {
            if !d.records.iter().any(|r| r.w == arm) {
                return Err(DataError::EmptyArm { arm });
            }
        }
        Ok(d)
    }

    /// Per-record validation only; permits a single-arm (or empty-arm)
    /// panel. Intended for descriptive summaries and synthetic truth
    /// tabulation, not for fitting.
    pub fn new_allowing_empty_arm(
        records: Vec<FirmRecord>,
        covariate_names: Vec<String>,
    ) -> Result<Dataset, DataError> {
        let Some(first) = records.first() else {
            return Err(DataError::Empty);
        };
        let k = covariate_names.len();
        let periods = first.s.len();
        let mut ids: Vec<&str> = Vec::with_capacity(records.len());
        for r in &records {
            if r.x.len() != k {
                return Err(DataError::CovariateLength {
                    id: r.id.clone(),
                    expected: k,
                    found: r.x.len(),
                });
            }
            if r.s.len() != periods || r.y.len() != periods {
                return Err(DataError::PeriodLength {
                    id: r.id.clone(),
                    expected: periods,
                    found: if r.s.len() != periods { r.s.len() } else { r.y.len() },
                });
            }
            if r.s.windows(2).any(|p| !p[0] && p[1]) {
                return Err(DataError::SurvivalNotAbsorbing { id: r.id.clone() });
            }
            for t in 0..periods {
                match (r.s[t], r.y[t]) {
                    (false, Some(_)) => {
                        return Err(DataError::OutcomeAfterDeath { id: r.id.clone(), period: t + 1 })
                    }
                    (true, None) => {
                        return Err(DataError::TruncatedWhileAlive { id: r.id.clone(), period: t + 1 })
                    }
                    _ => {}
                }
            }
            if let Some(col) = r.x.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFiniteCovariate { id: r.id.clone(), column: col + 1 });
            }
            ids.push(&r.id);
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if let Some(dup) = sorted.windows(2).find(|p| p[0] == p[1]) {
            return Err(DataError::DuplicateId { id: String::from(dup[0]) });
        }
        Ok(Dataset { records, covariate_names, periods })
    }

    /// Dataset with no records, used for prior-only posteriors.
    pub fn empty(covariate_names: Vec<String>, periods: usize) -> Dataset {
        Dataset { records: Vec::new(), covariate_names, periods }
    }

    #[inline]
    pub fn records(&self) -> &[FirmRecord] {
        &self.records
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.records.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    #[inline]
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    #[inline]
    pub fn covariate_count(&self) -> usize {
        self.covariate_names.len()
    }

    #[inline]
    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn arm_count(&self, arm: Arm) -> usize {
        self.records.iter().filter(|r| r.w == arm).count()
    }

    /// Returns a copy with every covariate column centered and scaled to
    /// unit standard deviation.
    pub fn standardized(&self) -> Result<Dataset, DataError> {
        let k = self.covariate_count();
        let n = self.len() as f64;
        if self.is_empty() {
            return Err(DataError::Empty);
        }
        let mut means = alloc::vec![0.0; k];
        let mut sds = alloc::vec![0.0; k];
        for r in &self.records {
            for (j, &v) in r.x.iter().enumerate() {
                means[j] += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        for r in &self.records {
            for (j, &v) in r.x.iter().enumerate() {
                sds[j] += (v - means[j]) * (v - means[j]);
            }
        }
        for (j, s) in sds.iter_mut().enumerate() {
            let var = if self.len() > 1 { *s / (n - 1.0) } else { 0.0 };
            if var <= 0.0 {
                return Err(DataError::ConstantColumn { column: j + 1 });
            }
            *s = crate::math::sqrt(var);
        }
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                for (j, v) in r.x.iter_mut().enumerate() {
                    *v = (*v - means[j]) / sds[j];
                }
                r
            })
            .collect();
        Ok(Dataset { records, covariate_names: self.covariate_names.clone(), periods: self.periods })
    }
}

/// Share of each observed (arm, survival path) cell within its arm.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellProportion {
    pub arm: Arm,
    pub survival: Vec<bool>,
    pub count: usize,
    /// Count divided by the arm total.
    pub proportion: f64,
}

/// Tabulates observed cells; proportions sum to one within each arm. Cells
/// are listed per arm from all-alive to dead-throughout, including empty
/// ones.
pub fn observed_cell_proportions(d: &Dataset) -> Vec<CellProportion> {
    let mut out = Vec::new();
    for arm in [Arm::Treated, Arm::Control] {
        let total = d.arm_count(arm);
        for cell in ObservedCell::all_for_arm(arm, d.periods()) {
            let count = d
                .records()
                .iter()
                .filter(|r| r.w == arm && r.s == cell.survival())
                .count();
            let proportion = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            out.push(CellProportion { arm, survival: cell.survival().to_vec(), count, proportion });
        }
    }
    out
}

/// Per-covariate means by arm and overall.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CovariateBalance {
    pub name: String,
    pub mean_control: f64,
    pub mean_treated: f64,
    pub mean_overall: f64,
}

pub fn covariate_balance(d: &Dataset) -> Vec<CovariateBalance> {
    let k = d.covariate_count();
    let mut sums = alloc::vec![[0.0f64; 2]; k];
    let mut counts = [0usize; 2];
    for r in d.records() {
        counts[r.w.index()] += 1;
        for (j, &v) in r.x.iter().enumerate() {
            sums[j][r.w.index()] += v;
        }
    }
    let n = (counts[0] + counts[1]) as f64;
    (0..k)
        .map(|j| {
            let per_arm = |w: usize| {
                if counts[w] == 0 {
                    f64::NAN
                } else {
                    sums[j][w] / counts[w] as f64
                }
            };
            CovariateBalance {
                name: d.covariate_names()[j].clone(),
                mean_control: per_arm(0),
                mean_treated: per_arm(1),
                mean_overall: if n == 0.0 { f64::NAN } else { (sums[j][0] + sums[j][1]) / n },
            }
        })
        .collect()
}

/// Cumulative survival and per-period closure shares, by arm. Closure at
/// period t is the share of the arm that is alive at t-1 and dead at t.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurvivalSummary {
    pub arm: Arm,
    pub period: usize,
    pub cumulative_survival: f64,
    pub closure: f64,
}

pub fn survival_summary(d: &Dataset) -> Vec<SurvivalSummary> {
    let mut out = Vec::new();
    for arm in [Arm::Control, Arm::Treated] {
        let total = d.arm_count(arm);
        if total == 0 {
            continue;
        }
        for t in 0..d.periods() {
            let alive = d.records().iter().filter(|r| r.w == arm && r.s[t]).count();
            let closed = d
                .records()
                .iter()
                .filter(|r| r.w == arm && !r.s[t] && (t == 0 || r.s[t - 1]))
                .count();
            out.push(SurvivalSummary {
                arm,
                period: t + 1,
                cumulative_survival: alive as f64 / total as f64,
                closure: closed as f64 / total as f64,
            });
        }
    }
    out
}
