//! Posterior predictive checks: replicate the panel from thinned posterior
//! draws and compare survival and hiring statistics against the observed
//! data.
//!
//! Replication is unconditional on each unit's own outcomes: stratum
//! sequences are redrawn from the fitted transition models given covariates,
//! survival follows under the unit's observed arm, and outcomes are chained
//! through the fitted logistic models. Two statistics are tracked per (arm,
//! period) — the survival share and the hiring share among the alive — each
//! with a posterior predictive p-value (ties split evenly). The
//! correct-prediction fractions for hiring and non-hiring decisions are
//! reported alongside as the numeric analog of sensitivity/specificity
//! traces.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::data::Dataset;
use crate::hmc::PosteriorDraws;
use crate::math;
use crate::model::{outcome_prob, transition_log_probs, ModelError};
use crate::rng::{draw_unit_stream, mix64, stream_rng};
use crate::strata::{Arm, Stratum, StratumSequence};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const PPC_SEED_SALT: u64 = 0x7070_6300; // "ppc"

#[derive(Debug, Clone, PartialEq)]
pub enum PpcError {
    Model(ModelError),
    LayoutMismatch,
    NoDraws,
}

impl fmt::Display for PpcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PpcError::Model(e) => write!(f, "{e}"),
            PpcError::LayoutMismatch => write!(f, "draws layout does not match the dataset"),
            PpcError::NoDraws => write!(f, "posterior draws are empty"),
        }
    }
}

impl core::error::Error for PpcError {}

impl From<ModelError> for PpcError {
    fn from(e: ModelError) -> Self {
        PpcError::Model(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PpcKind {
    /// Share of the arm alive at the period.
    Survival,
    /// Share hiring among the alive at the period.
    Hiring,
}

impl fmt::Display for PpcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PpcKind::Survival => write!(f, "survival"),
            PpcKind::Hiring => write!(f, "hiring"),
        }
    }
}

/// One tracked statistic with its posterior predictive p-value.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PpcStatistic {
    pub kind: PpcKind,
    pub arm: Arm,
    pub period: usize,
    pub observed: f64,
    pub replicated_mean: f64,
    /// P(T_rep >= T_obs) with ties counted half.
    pub p_value: f64,
    /// Draws where the statistic was defined.
    pub valid_draws: usize,
}

/// Fraction of correctly replicated hiring / non-hiring decisions among
/// units alive in both the observed and the replicated panel.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorrectPredictionRow {
    pub arm: Arm,
    pub period: usize,
    /// Among observed hiring decisions: share replicated as hiring.
    pub hiring: f64,
    /// Among observed non-hiring decisions: share replicated as non-hiring.
    pub non_hiring: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PpcReport {
    pub statistics: Vec<PpcStatistic>,
    pub correct_predictions: Vec<CorrectPredictionRow>,
    pub draws_used: usize,
}

impl PpcReport {
    /// Share of p-values inside [lo, hi].
    pub fn p_value_coverage(&self, lo: f64, hi: f64) -> f64 {
        if self.statistics.is_empty() {
            return f64::NAN;
        }
        let inside =
            self.statistics.iter().filter(|s| s.p_value >= lo && s.p_value <= hi).count();
        inside as f64 / self.statistics.len() as f64
    }
}

/// Evenly spaced draw indices, at most `thin_to` of them.
fn thinned_indices(total: usize, thin_to: usize) -> Vec<usize> {
    if total <= thin_to {
        (0..total).collect()
    } else {
        (0..thin_to).map(|i| i * total / thin_to).collect()
    }
}

struct Replication {
    /// Per (arm, period): replicated survival share.
    survival: Vec<Vec<f64>>,
    /// Per (arm, period): replicated hiring share among alive, if any.
    hiring: Vec<Vec<Option<f64>>>,
    /// Per (arm, period): (both-alive observed hirers, matched), (both-alive
    /// observed non-hirers, matched).
    correct: Vec<Vec<[usize; 4]>>,
}

fn replicate_once(
    data: &Dataset,
    theta: &[f64],
    layout: &crate::model::BlockLayout,
    draw_index: usize,
    seed: u64,
) -> Result<Replication, PpcError> {
    let periods = data.periods();
    let mut alive_count = [alloc::vec![0usize; periods], alloc::vec![0usize; periods]];
    let mut hire_count = [alloc::vec![0usize; periods], alloc::vec![0usize; periods]];
    let mut arm_total = [0usize; 2];
    let mut correct = [alloc::vec![[0usize; 4]; periods], alloc::vec![[0usize; 4]; periods]];

    for (i, record) in data.records().iter().enumerate() {
        let mut rng = stream_rng(seed ^ PPC_SEED_SALT, draw_unit_stream(draw_index, i));
        let w = record.w;
        arm_total[w.index()] += 1;
        // Redraw the stratum sequence from the fitted chain.
        let mut labels: Vec<Stratum> = Vec::with_capacity(periods);
        for _ in 0..periods {
            let log_probs = transition_log_probs(layout, theta, &labels, &record.x)?;
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
        let seq = StratumSequence::new(labels, true).expect("chain respects transitions");
        let horizon = seq.alive_horizon(w);
        let mut prev: Option<bool> = None;
        for t in 1..=horizon {
            let p = outcome_prob(layout, theta, t, w, &seq.labels()[..t], prev, &record.x)?;
            let y = rng.random_bool(p);
            alive_count[w.index()][t - 1] += 1;
            if y {
                hire_count[w.index()][t - 1] += 1;
            }
            if record.s[t - 1] {
                let y_obs = record.y[t - 1].expect("alive implies observed outcome");
                let cell = &mut correct[w.index()][t - 1];
                if y_obs {
                    cell[0] += 1;
                    if y {
                        cell[1] += 1;
                    }
                } else {
                    cell[2] += 1;
                    if !y {
                        cell[3] += 1;
                    }
                }
            }
            prev = Some(y);
        }
    }

    let mut survival = alloc::vec![alloc::vec![0.0; periods]; 2];
    let mut hiring = alloc::vec![alloc::vec![None; periods]; 2];
    for w in 0..2 {
        for t in 0..periods {
            survival[w][t] = if arm_total[w] == 0 {
                f64::NAN
            } else {
                alive_count[w][t] as f64 / arm_total[w] as f64
            };
            hiring[w][t] = (alive_count[w][t] > 0)
                .then(|| hire_count[w][t] as f64 / alive_count[w][t] as f64);
        }
    }
    Ok(Replication {
        survival,
        hiring,
        correct: alloc::vec![correct[0].clone(), correct[1].clone()],
    })
}

/// Runs the posterior predictive check over at most `thin_to` evenly spaced
/// retained draws.
pub fn posterior_predictive_check(
    data: &Dataset,
    draws: &PosteriorDraws,
    thin_to: usize,
    seed: u64,
) -> Result<PpcReport, PpcError> {
    if draws.total_draws() == 0 {
        return Err(PpcError::NoDraws);
    }
    let layout = draws.layout();
    if data.periods() != layout.periods() || data.covariate_count() != layout.covariates() {
        return Err(PpcError::LayoutMismatch);
    }
    let periods = data.periods();
    let indices = thinned_indices(draws.total_draws(), thin_to.max(1));

    let reps: Vec<Result<Replication, PpcError>> = {
        let run = |&m: &usize| {
            replicate_once(data, draws.flat_draw(m), layout, m, mix64(seed))
        };
        #[cfg(feature = "parallel")]
        {
            indices.par_iter().map(run).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            indices.iter().map(run).collect()
        }
    };
    let reps: Vec<Replication> = reps.into_iter().collect::<Result<_, _>>()?;

    // Observed statistics.
    let mut obs_survival = alloc::vec![alloc::vec![0.0; periods]; 2];
    let mut obs_hiring = alloc::vec![alloc::vec![f64::NAN; periods]; 2];
    for w_idx in 0..2 {
        let arm = Arm::from_index(w_idx).expect("0 or 1");
        let total = data.arm_count(arm);
        for t in 0..periods {
            let alive = data.records().iter().filter(|r| r.w == arm && r.s[t]).count();
            let hires = data
                .records()
                .iter()
                .filter(|r| r.w == arm && r.s[t] && r.y[t] == Some(true))
                .count();
            obs_survival[w_idx][t] =
                if total == 0 { f64::NAN } else { alive as f64 / total as f64 };
            if alive > 0 {
                obs_hiring[w_idx][t] = hires as f64 / alive as f64;
            }
        }
    }

    let p_value = |observed: f64, replicated: &[f64]| -> (f64, f64, usize) {
        let n = replicated.len();
        if n == 0 || observed.is_nan() {
            return (f64::NAN, f64::NAN, 0);
        }
        let above = replicated.iter().filter(|&&v| v > observed).count() as f64;
        let ties = replicated.iter().filter(|&&v| v == observed).count() as f64;
        ((above + 0.5 * ties) / n as f64, math::mean(replicated), n)
    };

    let mut statistics = Vec::new();
    for kind in [PpcKind::Survival, PpcKind::Hiring] {
        for w_idx in 0..2 {
            let arm = Arm::from_index(w_idx).expect("0 or 1");
            for t in 0..periods {
                let (observed, values): (f64, Vec<f64>) = match kind {
                    PpcKind::Survival => (
                        obs_survival[w_idx][t],
                        reps.iter().map(|r| r.survival[w_idx][t]).collect(),
                    ),
                    PpcKind::Hiring => (
                        obs_hiring[w_idx][t],
                        reps.iter().filter_map(|r| r.hiring[w_idx][t]).collect(),
                    ),
                };
                let (p, rep_mean, valid) = p_value(observed, &values);
                statistics.push(PpcStatistic {
                    kind,
                    arm,
                    period: t + 1,
                    observed,
                    replicated_mean: rep_mean,
                    p_value: p,
                    valid_draws: valid,
                });
            }
        }
    }

    let mut correct_predictions = Vec::new();
    for w_idx in 0..2 {
        let arm = Arm::from_index(w_idx).expect("0 or 1");
        for t in 0..periods {
            let mut hirers = 0usize;
            let mut hirers_matched = 0usize;
            let mut non = 0usize;
            let mut non_matched = 0usize;
            for r in &reps {
                let cell = r.correct[w_idx][t];
                hirers += cell[0];
                hirers_matched += cell[1];
                non += cell[2];
                non_matched += cell[3];
            }
            correct_predictions.push(CorrectPredictionRow {
                arm,
                period: t + 1,
                hiring: if hirers == 0 { f64::NAN } else { hirers_matched as f64 / hirers as f64 },
                non_hiring: if non == 0 { f64::NAN } else { non_matched as f64 / non as f64 },
            });
        }
    }

    Ok(PpcReport { statistics, correct_predictions, draws_used: indices.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FirmRecord;
    use crate::hmc::PosteriorDraws;
    use crate::model::{BlockLayout, ParamVector, SlopeMode};
    use crate::simulation::{simulate_dataset, AssignmentLaw, CovariateLaw, GeneratorSpec};
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;
    use alloc::vec::Vec;

    fn synthetic_draws(layout: &BlockLayout, thetas: &[Vec<f64>]) -> PosteriorDraws {
        let values: Vec<f64> = thetas.iter().flatten().copied().collect();
        PosteriorDraws::from_parts(
            layout.clone(),
            1,
            thetas.len(),
            values,
            vec![1.0],
            vec![0.1],
            vec![0],
            vec![],
        )
        .unwrap()
    }

    fn model_spec(layout: &BlockLayout, theta: ParamVector, units: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            theta_true: theta,
            covariate_law: CovariateLaw::Bernoulli(vec![0.5; layout.covariates()]),
            assignment: AssignmentLaw::balanced(layout.covariates()),
            units,
            seed,
            layout: layout.clone(),
        }
    }

    #[test]
    fn report_shape_is_two_statistics_by_arm_and_period() {
        let layout = BlockLayout::new(3, 1, SlopeMode::Shared);
        let spec = model_spec(&layout, ParamVector::zeros(&layout), 300, 8);
        let (data, _) = simulate_dataset(&spec).unwrap();
        let draws = synthetic_draws(&layout, &[vec![0.0; layout.dim()]]);
        let report = posterior_predictive_check(&data, &draws, 50, 3).unwrap();
        assert_eq!(report.statistics.len(), 2 * 2 * 3);
        assert_eq!(report.correct_predictions.len(), 2 * 3);
        assert_eq!(report.draws_used, 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let layout = BlockLayout::new(3, 1, SlopeMode::Shared);
        let spec = model_spec(&layout, ParamVector::zeros(&layout), 120, 5);
        let (data, _) = simulate_dataset(&spec).unwrap();
        let mut thetas = Vec::new();
        for i in 0..7 {
            thetas.push(vec![0.01 * i as f64; layout.dim()]);
        }
        let draws = synthetic_draws(&layout, &thetas);
        let a = posterior_predictive_check(&data, &draws, 5, 9).unwrap();
        let b = posterior_predictive_check(&data, &draws, 5, 9).unwrap();
        // Debug rendering compares NaN fields as equal text.
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let c = posterior_predictive_check(&data, &draws, 5, 10).unwrap();
        assert_ne!(format!("{a:?}"), format!("{c:?}"));
    }

    #[test]
    fn constant_hiring_yields_perfect_prediction_for_the_constant_class() {
        // Strong positive outcome intercepts: everyone alive hires, both
        // observed and replicated.
        let layout = BlockLayout::new(3, 1, SlopeMode::Shared);
        let mut theta = ParamVector::zeros(&layout);
        for b in layout.outcome_blocks() {
            let tag = layout.names()[b.offset].clone();
            theta.set(&layout, &tag, 12.0).unwrap();
        }
        let spec = model_spec(&layout, theta.clone(), 300, 13);
        let (data, _) = simulate_dataset(&spec).unwrap();
        for r in data.records() {
            for t in 0..3 {
                if r.s[t] {
                    assert_eq!(r.y[t], Some(true));
                }
            }
        }
        let draws = synthetic_draws(&layout, &[theta.as_slice().to_vec()]);
        let report = posterior_predictive_check(&data, &draws, 20, 21).unwrap();
        for row in &report.correct_predictions {
            if !row.hiring.is_nan() {
                assert_eq!(row.hiring, 1.0, "arm {} period {}", row.arm, row.period);
            }
            assert!(row.non_hiring.is_nan());
        }
    }

    #[test]
    fn model_generated_data_has_moderate_p_values() {
        let layout = BlockLayout::new(3, 2, SlopeMode::Shared);
        let mut theta = ParamVector::zeros(&layout);
        theta.set(&layout, "g1->AS.icpt", 0.8).unwrap();
        theta.set(&layout, "y1|w1,AS.icpt", 0.4).unwrap();
        let spec = model_spec(&layout, theta.clone(), 1500, 17);
        let (data, _) = simulate_dataset(&spec).unwrap();
        // Posterior approximated by jittered copies of the truth.
        let mut rng = crate::rng::stream_rng(71, 0);
        let thetas: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                theta
                    .as_slice()
                    .iter()
                    .map(|&v| v + 0.03 * crate::rng::standard_normal(&mut rng))
                    .collect()
            })
            .collect();
        let draws = synthetic_draws(&layout, &thetas);
        let report = posterior_predictive_check(&data, &draws, 60, 29).unwrap();
        for s in &report.statistics {
            assert!(s.valid_draws >= 50, "{:?}", s);
            assert!(
                s.p_value > 0.001 && s.p_value < 0.999,
                "{} {} t={} p={}",
                s.kind,
                s.arm,
                s.period,
                s.p_value
            );
        }
        let coverage = report.p_value_coverage(0.05, 0.95);
        assert!(coverage >= 0.75, "coverage {coverage}");
    }

    #[test]
    fn mismatched_layout_is_rejected() {
        let layout = BlockLayout::new(3, 1, SlopeMode::Shared);
        let other = BlockLayout::new(3, 2, SlopeMode::Shared);
        let r = FirmRecord {
            id: "1".to_string(),
            x: vec![0.0, 1.0],
            w: Arm::Treated,
            s: vec![true, true, true],
            y: vec![Some(true); 3],
        };
        let data =
            Dataset::new_allowing_empty_arm(vec![r], vec!["a".to_string(), "b".to_string()])
                .unwrap();
        let draws = synthetic_draws(&layout, &[vec![0.0; layout.dim()]]);
        assert!(matches!(
            posterior_predictive_check(&data, &draws, 10, 0),
            Err(PpcError::LayoutMismatch)
        ));
        let draws_ok = synthetic_draws(&other, &[vec![0.0; other.dim()]]);
        assert!(posterior_predictive_check(&data, &draws_ok, 10, 0).is_ok());
    }
}
