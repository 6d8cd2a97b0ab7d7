//! Synthetic data generation from known parameters, plus brute-force Monte
//! Carlo oracles for ground-truth stratum frequencies and survivor average
//! causal effects.
//!
//! Generation follows the model's own factorization: covariates, then
//! treatment (logistic in the covariates, with an overlap guard), then the
//! stratum sequence from the chained transition models, then both arms'
//! outcome chains wherever the potential outcome is defined. The observed
//! dataset masks everything by the assigned arm; the truth record keeps the
//! full latent state for oracle use. Units use independent seeded RNG
//! streams, so generation is reproducible and order-independent.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::data::{DataError, Dataset, FirmRecord, Outcome};
use crate::math;
use crate::model::{
    outcome_prob, transition_log_probs, BlockLayout, ModelError, ParamVector,
};
use crate::rng::stream_rng;
use crate::strata::{Arm, Stratum, StratumSequence};

/// Overlap guard on P(W = 1 | X).
pub const OVERLAP_EPSILON: f64 = 0.01;

const UNIT_STREAM_BASE: u64 = 1 << 33;
const ORACLE_STREAM_BASE: u64 = 1 << 34;

/// Covariate generating law.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CovariateLaw {
    /// Independent Bernoulli indicators with the given success
    /// probabilities.
    Bernoulli(Vec<f64>),
    /// Fixed design matrix, cycled over units.
    Fixed(Vec<Vec<f64>>),
}

impl CovariateLaw {
    pub fn covariates(&self) -> usize {
        match self {
            CovariateLaw::Bernoulli(p) => p.len(),
            CovariateLaw::Fixed(rows) => rows.first().map_or(0, |r| r.len()),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R, unit: usize) -> Vec<f64> {
        match self {
            CovariateLaw::Bernoulli(probs) => {
                probs.iter().map(|&p| f64::from(rng.random_bool(p))).collect()
            }
            CovariateLaw::Fixed(rows) => rows[unit % rows.len()].clone(),
        }
    }
}

/// Logistic treatment assignment P(W = 1 | X) = expit(intercept + slopes'X).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AssignmentLaw {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl AssignmentLaw {
    pub fn balanced(k: usize) -> AssignmentLaw {
        AssignmentLaw { intercept: 0.0, slopes: alloc::vec![0.0; k] }
    }

    fn propensity(&self, x: &[f64]) -> f64 {
        let mut eta = self.intercept;
        for (a, &xj) in self.slopes.iter().zip(x) {
            eta += a * xj;
        }
        math::expit(eta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimulationError {
    Model(ModelError),
    Data(DataError),
    /// Assignment law can produce propensities outside (epsilon, 1-epsilon).
    OverlapViolated { min: f64, max: f64 },
    DimensionMismatch { expected: usize, found: usize },
    ZeroUnits,
    EmptyDesign,
    InvalidBernoulli { index: usize },
    /// The conditioning stratum is (empirically) too rare for the oracle.
    StratumTooRare { kept: usize, total: usize },
    InvalidHorizon { s: usize, t_prime: usize, periods: usize },
}

impl fmt::Display for SimulationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimulationError::Model(e) => write!(f, "{e}"),
            SimulationError::Data(e) => write!(f, "{e}"),
            SimulationError::OverlapViolated { min, max } => {
                write!(f, "assignment law violates overlap: propensity range [{min:.4}, {max:.4}]")
            }
            SimulationError::DimensionMismatch { expected, found } => {
                write!(f, "expected {expected} covariates, found {found}")
            }
            SimulationError::ZeroUnits => write!(f, "unit count must be positive"),
            SimulationError::EmptyDesign => write!(f, "fixed design matrix has no rows"),
            SimulationError::InvalidBernoulli { index } => {
                write!(f, "Bernoulli probability out of [0,1] at covariate {index}")
            }
            SimulationError::StratumTooRare { kept, total } => {
                write!(f, "stratum too rare for oracle: {kept} of {total} simulated units")
            }
            SimulationError::InvalidHorizon { s, t_prime, periods } => {
                write!(f, "invalid horizon: t'={t_prime}, s={s}, T={periods}")
            }
        }
    }
}

impl core::error::Error for SimulationError {}

impl From<ModelError> for SimulationError {
    fn from(e: ModelError) -> Self {
        SimulationError::Model(e)
    }
}

impl From<DataError> for SimulationError {
    fn from(e: DataError) -> Self {
        SimulationError::Data(e)
    }
}

/// Everything needed to generate a synthetic panel from known parameters.
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub layout: BlockLayout,
    pub theta_true: ParamVector,
    pub covariate_law: CovariateLaw,
    pub assignment: AssignmentLaw,
    pub units: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), SimulationError> {
        self.layout.check_dim(self.theta_true.as_slice())?;
        if self.units == 0 {
            return Err(SimulationError::ZeroUnits);
        }
        let k = self.layout.covariates();
        if self.covariate_law.covariates() != k {
            return Err(SimulationError::DimensionMismatch {
                expected: k,
                found: self.covariate_law.covariates(),
            });
        }
        if self.assignment.slopes.len() != k {
            return Err(SimulationError::DimensionMismatch {
                expected: k,
                found: self.assignment.slopes.len(),
            });
        }
        match &self.covariate_law {
            CovariateLaw::Bernoulli(probs) => {
                if let Some(i) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
                    return Err(SimulationError::InvalidBernoulli { index: i });
                }
                // Extreme propensity over the attainable binary hypercube.
                let mut lo = self.assignment.intercept;
                let mut hi = self.assignment.intercept;
                for (j, &a) in self.assignment.slopes.iter().enumerate() {
                    let values: &[f64] = if probs[j] <= 0.0 {
                        &[0.0]
                    } else if probs[j] >= 1.0 {
                        &[1.0]
                    } else {
                        &[0.0, 1.0]
                    };
                    let contributions: Vec<f64> = values.iter().map(|&v| a * v).collect();
                    lo += contributions.iter().copied().fold(f64::INFINITY, f64::min);
                    hi += contributions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                }
                let (pmin, pmax) = (math::expit(lo), math::expit(hi));
                if pmin <= OVERLAP_EPSILON || pmax >= 1.0 - OVERLAP_EPSILON {
                    return Err(SimulationError::OverlapViolated { min: pmin, max: pmax });
                }
            }
            CovariateLaw::Fixed(rows) => {
                if rows.is_empty() {
                    return Err(SimulationError::EmptyDesign);
                }
                if let Some(r) = rows.iter().find(|r| r.len() != k) {
                    return Err(SimulationError::DimensionMismatch { expected: k, found: r.len() });
                }
                let mut pmin = f64::INFINITY;
                let mut pmax = f64::NEG_INFINITY;
                for r in rows {
                    let p = self.assignment.propensity(r);
                    pmin = pmin.min(p);
                    pmax = pmax.max(p);
                }
                if pmin <= OVERLAP_EPSILON || pmax >= 1.0 - OVERLAP_EPSILON {
                    return Err(SimulationError::OverlapViolated { min: pmin, max: pmax });
                }
            }
        }
        Ok(())
    }
}

/// Full latent state of one simulated unit: the stratum sequence and both
/// arms' outcome paths (truncation sentinel where undefined).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TruthRecord {
    pub id: String,
    pub sequence: StratumSequence,
    pub y_control: Vec<Outcome>,
    pub y_treated: Vec<Outcome>,
}

/// Samples a stratum sequence by walking the transition chain.
fn draw_sequence<R: Rng>(
    layout: &BlockLayout,
    theta: &[f64],
    x: &[f64],
    rng: &mut R,
) -> Result<StratumSequence, SimulationError> {
    let mut labels: Vec<Stratum> = Vec::with_capacity(layout.periods());
    for _ in 0..layout.periods() {
        let log_probs = transition_log_probs(layout, theta, &labels, x)?;
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut chosen = log_probs[log_probs.len() - 1].0;
        for (dest, lp) in &log_probs {
            acc += math::exp(*lp);
            if u < acc {
                chosen = *dest;
                break;
            }
        }
        labels.push(chosen);
    }
    StratumSequence::new(labels, true).map_err(|_| SimulationError::Model(ModelError::InvalidHistory))
}

/// Samples the outcome chain under one arm for the periods the unit is
/// alive under that arm.
fn draw_outcome_chain<R: Rng>(
    layout: &BlockLayout,
    theta: &[f64],
    seq: &StratumSequence,
    arm: Arm,
    x: &[f64],
    rng: &mut R,
) -> Result<Vec<Outcome>, SimulationError> {
    let horizon = seq.alive_horizon(arm);
    let mut out: Vec<Outcome> = alloc::vec![None; layout.periods()];
    let mut prev: Option<bool> = None;
    for t in 1..=horizon {
        let p = outcome_prob(layout, theta, t, arm, &seq.labels()[..t], prev, x)?;
        let y = rng.random_bool(p);
        out[t - 1] = Some(y);
        prev = Some(y);
    }
    Ok(out)
}

/// Generates the observed dataset plus the per-unit truth records.
pub fn simulate_dataset(spec: &GeneratorSpec) -> Result<(Dataset, Vec<TruthRecord>), SimulationError> {
    spec.validate()?;
    let layout = &spec.layout;
    let theta = spec.theta_true.as_slice();
    let mut records = Vec::with_capacity(spec.units);
    let mut truths = Vec::with_capacity(spec.units);
    for i in 0..spec.units {
        let mut rng = stream_rng(spec.seed, UNIT_STREAM_BASE + i as u64);
        let x = spec.covariate_law.draw(&mut rng, i);
        let w = if rng.random_bool(spec.assignment.propensity(&x)) {
            Arm::Treated
        } else {
            Arm::Control
        };
        let seq = draw_sequence(layout, theta, &x, &mut rng)?;
        let y_control = draw_outcome_chain(layout, theta, &seq, Arm::Control, &x, &mut rng)?;
        let y_treated = draw_outcome_chain(layout, theta, &seq, Arm::Treated, &x, &mut rng)?;
        let s = seq.survival_path(w);
        let y_obs = match w {
            Arm::Control => y_control.clone(),
            Arm::Treated => y_treated.clone(),
        };
        let id = format!("u{i}");
        records.push(FirmRecord { id: id.clone(), x, w, s, y: y_obs });
        truths.push(TruthRecord { id, sequence: seq, y_control, y_treated });
    }
    let names: Vec<String> = (1..=layout.covariates()).map(|j| format!("x{j}")).collect();
    let dataset = Dataset::new(records, names)?;
    Ok((dataset, truths))
}

/// Brute-force SACE oracle value with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OracleSace {
    pub value: f64,
    pub std_error: f64,
    /// Units in the conditioning stratum out of `simulated`.
    pub kept: usize,
    pub simulated: usize,
}

/// Simulates `mc_size` fresh units from the true parameters and averages
/// Y_t'(1) - Y_t'(0) over those always-surviving through period `s`.
pub fn oracle_sace(
    spec: &GeneratorSpec,
    s: usize,
    t_prime: usize,
    mc_size: usize,
) -> Result<OracleSace, SimulationError> {
    spec.validate()?;
    let periods = spec.layout.periods();
    if t_prime == 0 || t_prime > s || s > periods {
        return Err(SimulationError::InvalidHorizon { s, t_prime, periods });
    }
    let layout = &spec.layout;
    let theta = spec.theta_true.as_slice();
    let mut kept = 0usize;
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for i in 0..mc_size {
        let mut rng = stream_rng(spec.seed, ORACLE_STREAM_BASE + i as u64);
        let x = spec.covariate_law.draw(&mut rng, i);
        let seq = draw_sequence(layout, theta, &x, &mut rng)?;
        if !seq.always_survivor_through(s) {
            continue;
        }
        let y_control = draw_outcome_chain(layout, theta, &seq, Arm::Control, &x, &mut rng)?;
        let y_treated = draw_outcome_chain(layout, theta, &seq, Arm::Treated, &x, &mut rng)?;
        let diff = f64::from(y_treated[t_prime - 1].expect("alive through s >= t'"))
            - f64::from(y_control[t_prime - 1].expect("alive through s >= t'"));
        kept += 1;
        sum += diff;
        sum_sq += diff * diff;
    }
    if kept < 2 || (kept as f64) < 1e-4 * mc_size as f64 {
        return Err(SimulationError::StratumTooRare { kept, total: mc_size });
    }
    let n = kept as f64;
    let mean = sum / n;
    let var = (sum_sq - n * mean * mean) / (n - 1.0);
    Ok(OracleSace { value: mean, std_error: math::sqrt(var / n), kept, simulated: mc_size })
}
