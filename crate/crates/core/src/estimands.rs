//! Posterior quantities of interest: longitudinal stratum membership
//! probabilities, finite-sample imputation of latent strata and missing
//! potential outcomes, and the survivor average causal effect family
//! SACE_{1:s}(t').
//!
//! Two SACE estimands are provided. The finite-sample default samples each
//! unit's stratum sequence from its posterior responsibilities, restricts to
//! units always-surviving through period s, reads the observed-arm outcome
//! and chains the missing-arm outcome forward through the fitted logistic
//! models. The super-population variant weights every unit by its
//! covariate-conditional probability of the AS prefix and contrasts
//! model-expected outcomes under both arms; it conditions on covariates
//! only, never on the unit's own outcomes.
//!
//! Imputation RNG is seeded per (draw index, unit id), so results are
//! reproducible and independent of iteration order: repeated calls with the
//! same seed share imputations draw for draw.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::data::{Dataset, Outcome};
use crate::hmc::PosteriorDraws;
use crate::likelihood::{LikelihoodError, PosteriorTarget};
use crate::math;
use crate::model::{outcome_prob, transition_log_probs, ModelError, PriorSpec};
use crate::rng::{draw_unit_stream, stream_rng};
use crate::strata::{enumerate_sequences, Arm, Stratum, StratumSequence};

pub use crate::likelihood::membership_responsibilities;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub enum EstimandError {
    Likelihood(LikelihoodError),
    Model(ModelError),
    InvalidHorizon { s: usize, t_prime: usize, periods: usize },
    /// Every retained draw was skipped (empty conditioning sets).
    AllDrawsSkipped { s: usize, t_prime: usize },
    NoDraws,
}

impl fmt::Display for EstimandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimandError::Likelihood(e) => write!(f, "{e}"),
            EstimandError::Model(e) => write!(f, "{e}"),
            EstimandError::InvalidHorizon { s, t_prime, periods } => {
                write!(f, "invalid horizon: t'={t_prime}, s={s}, T={periods}")
            }
            EstimandError::AllDrawsSkipped { s, t_prime } => {
                write!(f, "no draw had units always-surviving through {s} (SACE_1:{s}({t_prime}))")
            }
            EstimandError::NoDraws => write!(f, "posterior draws are empty"),
        }
    }
}

impl core::error::Error for EstimandError {}

impl From<LikelihoodError> for EstimandError {
    fn from(e: LikelihoodError) -> Self {
        EstimandError::Likelihood(e)
    }
}

impl From<ModelError> for EstimandError {
    fn from(e: ModelError) -> Self {
        EstimandError::Model(e)
    }
}

fn summarize(values: &[f64]) -> (f64, f64, f64, f64) {
    (
        math::mean(values),
        if values.len() > 1 { math::sample_sd(values) } else { 0.0 },
        math::quantile(values, 0.05),
        math::quantile(values, 0.95),
    )
}

/// Posterior summary of one sequence's population membership share.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StratumRow {
    pub sequence: StratumSequence,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
}

/// Stratum membership summaries over all monotone sequences, in canonical
/// order (10 rows for three periods).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StratumPosterior {
    pub rows: Vec<StratumRow>,
}

/// Finite-sample stratum membership proportions: per draw, unit
/// responsibilities averaged over the dataset; summarized across draws.
pub fn stratum_proportions(
    data: &Dataset,
    draws: &PosteriorDraws,
) -> Result<StratumPosterior, EstimandError> {
    if draws.total_draws() == 0 {
        return Err(EstimandError::NoDraws);
    }
    let target = PosteriorTarget::new(data, draws.layout().clone(), PriorSpec::default())?;
    let sequences = enumerate_sequences(draws.layout().periods(), true)
        .map_err(|_| EstimandError::NoDraws)?;
    let n_seq = sequences.len();
    let n_units = target.unit_count();
    let global: Vec<Vec<usize>> =
        (0..n_units).map(|i| target.compatible_global_indices(i)).collect();

    let per_draw: Vec<Vec<f64>> = map_draws(draws.total_draws(), |m| {
        let theta = draws.flat_draw(m);
        let mut acc = vec![0.0f64; n_seq];
        for i in 0..n_units {
            let resp = target.responsibilities(i, theta).expect("dimensions already checked");
            for (r, &gidx) in resp.iter().zip(&global[i]) {
                acc[gidx] += r;
            }
        }
        let scale = 1.0 / n_units as f64;
        for a in acc.iter_mut() {
            *a *= scale;
        }
        debug_assert!((acc.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        acc
    });

    let rows = sequences
        .into_iter()
        .enumerate()
        .map(|(j, sequence)| {
            let values: Vec<f64> = per_draw.iter().map(|p| p[j]).collect();
            let (mean, sd, q05, q95) = summarize(&values);
            StratumRow { sequence, mean, sd, q05, q95 }
        })
        .collect();
    Ok(StratumPosterior { rows })
}

/// Estimation mode for the SACE family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SaceMode {
    /// Impute each unit's stratum and missing-arm outcomes per draw.
    #[default]
    FiniteSample,
    /// Weight units by covariate-conditional AS-prefix probability and use
    /// model-expected outcomes.
    SuperPopulation,
}

impl fmt::Display for SaceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SaceMode::FiniteSample => write!(f, "finite-sample"),
            SaceMode::SuperPopulation => write!(f, "super-population"),
        }
    }
}

/// Posterior summary of SACE_{1:s}(t').
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SaceEstimate {
    pub s: usize,
    pub t_prime: usize,
    pub mode: SaceMode,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
    pub per_draw: Vec<f64>,
    /// Draws skipped because no unit conditioned on the AS prefix.
    pub skipped_draws: usize,
    /// More than 10 percent of draws skipped.
    pub excess_skip_warning: bool,
}

/// One posterior draw's imputation for every unit.
#[derive(Debug, Clone)]
pub struct DrawImputation {
    /// Per unit: index of the sampled sequence in its compatible list.
    pub sequence_choice: Vec<usize>,
    /// Per unit: length of the sampled sequence's leading AS run.
    pub as_prefix: Vec<usize>,
    /// Per unit: imputed missing-arm outcome chain (truncation sentinel
    /// beyond the missing-arm survival horizon).
    pub y_missing: Vec<Vec<Outcome>>,
}

/// Samples stratum sequences and missing-arm outcome chains for one
/// posterior draw. RNG streams are derived from (seed, draw index, unit
/// index) only.
pub fn impute_draw(
    target: &PosteriorTarget,
    theta: &[f64],
    draw_index: usize,
    seed: u64,
) -> Result<DrawImputation, EstimandError> {
    let layout = target.layout();
    let periods = layout.periods();
    let n_units = target.unit_count();
    let mut sequence_choice = Vec::with_capacity(n_units);
    let mut as_prefix = Vec::with_capacity(n_units);
    let mut y_missing = Vec::with_capacity(n_units);
    for i in 0..n_units {
        let mut rng = stream_rng(seed, draw_unit_stream(draw_index, i));
        let resp = target.responsibilities(i, theta)?;
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut choice = resp.len() - 1;
        for (j, &r) in resp.iter().enumerate() {
            acc += r;
            if u < acc {
                choice = j;
                break;
            }
        }
        let seq = &target.compatible(i)[choice];
        let prefix = seq.labels().iter().take_while(|&&g| g == Stratum::As).count();

        let record = target.record(i);
        let missing_arm = record.w.other();
        let horizon = seq.alive_horizon(missing_arm);
        let mut chain: Vec<Outcome> = vec![None; periods];
        let mut prev: Option<bool> = None;
        for t in 1..=horizon {
            let p = outcome_prob(layout, theta, t, missing_arm, &seq.labels()[..t], prev, &record.x)?;
            let y = rng.random_bool(p);
            chain[t - 1] = Some(y);
            prev = Some(y);
        }
        sequence_choice.push(choice);
        as_prefix.push(prefix);
        y_missing.push(chain);
    }
    Ok(DrawImputation { sequence_choice, as_prefix, y_missing })
}

struct Engine<'a> {
    target: PosteriorTarget,
    data: &'a Dataset,
    draws: &'a PosteriorDraws,
}

impl<'a> Engine<'a> {
    fn new(data: &'a Dataset, draws: &'a PosteriorDraws) -> Result<Engine<'a>, EstimandError> {
        if draws.total_draws() == 0 {
            return Err(EstimandError::NoDraws);
        }
        let target = PosteriorTarget::new(data, draws.layout().clone(), PriorSpec::default())?;
        Ok(Engine { target, data, draws })
    }

    fn impute(&self, draw_index: usize, seed: u64) -> Result<DrawImputation, EstimandError> {
        impute_draw(&self.target, self.draws.flat_draw(draw_index), draw_index, seed)
    }

    /// Per-draw finite-sample SACE values for all requested (s, t') pairs;
    /// `None` marks a skipped draw for that pair.
    fn finite_sample_pass(
        &self,
        pairs: &[(usize, usize)],
        seed: u64,
    ) -> Result<Vec<Vec<Option<f64>>>, EstimandError> {
        let results: Vec<Result<Vec<Option<f64>>, EstimandError>> =
            map_draws(self.draws.total_draws(), |m| {
                let imp = self.impute(m, seed)?;
                let mut row = Vec::with_capacity(pairs.len());
                for &(s, t_prime) in pairs {
                    let mut diff_sum = 0.0;
                    let mut count = 0usize;
                    for (i, record) in self.data.records().iter().enumerate() {
                        if imp.as_prefix[i] < s {
                            continue;
                        }
                        let observed = record.y[t_prime - 1]
                            .expect("AS prefix implies alive under the observed arm");
                        let missing = imp.y_missing[i][t_prime - 1]
                            .expect("AS prefix implies alive under the missing arm");
                        let (y1, y0) = match record.w {
                            Arm::Treated => (observed, missing),
                            Arm::Control => (missing, observed),
                        };
                        diff_sum += f64::from(y1) - f64::from(y0);
                        count += 1;
                    }
                    row.push((count > 0).then(|| diff_sum / count as f64));
                }
                Ok(row)
            });
        results.into_iter().collect()
    }

    /// Per-draw super-population SACE values (covariate-conditional
    /// weights, model-expected outcomes; no imputation noise).
    fn super_population_pass(
        &self,
        pairs: &[(usize, usize)],
    ) -> Result<Vec<Vec<Option<f64>>>, EstimandError> {
        let layout = self.draws.layout();
        let results: Vec<Result<Vec<Option<f64>>, EstimandError>> =
            map_draws(self.draws.total_draws(), |m| {
                let theta = self.draws.flat_draw(m);
                let mut row = Vec::with_capacity(pairs.len());
                for &(s, t_prime) in pairs {
                    let mut weight_sum = 0.0;
                    let mut value_sum = 0.0;
                    for record in self.data.records() {
                        // P(G_{1..s} = AS^s | x) is the chained product of
                        // AS transition probabilities.
                        let mut weight = 1.0;
                        let as_hist: Vec<Stratum> = vec![Stratum::As; s];
                        for t in 1..=s {
                            let lp = transition_log_probs(layout, theta, &as_hist[..t - 1], &record.x)?;
                            let p_as = lp
                                .iter()
                                .find(|(d, _)| *d == Stratum::As)
                                .map(|(_, l)| math::exp(*l))
                                .unwrap_or(0.0);
                            weight *= p_as;
                        }
                        let expected = |arm: Arm| -> Result<f64, EstimandError> {
                            let mut prob_one = 0.0;
                            for t in 1..=t_prime {
                                prob_one = if t == 1 {
                                    outcome_prob(layout, theta, 1, arm, &as_hist[..1], None, &record.x)?
                                } else {
                                    let p_with = outcome_prob(
                                        layout, theta, t, arm, &as_hist[..t], Some(true), &record.x,
                                    )?;
                                    let p_without = outcome_prob(
                                        layout, theta, t, arm, &as_hist[..t], Some(false), &record.x,
                                    )?;
                                    prob_one * p_with + (1.0 - prob_one) * p_without
                                };
                            }
                            Ok(prob_one)
                        };
                        value_sum += weight * (expected(Arm::Treated)? - expected(Arm::Control)?);
                        weight_sum += weight;
                    }
                    row.push((weight_sum > 0.0).then(|| value_sum / weight_sum));
                }
                Ok(row)
            });
        results.into_iter().collect()
    }
}

/// Posterior SACE_{1:s}(t') estimates for several (s, t') pairs in one pass
/// over the draws, sharing per-draw imputations so the family is internally
/// coherent.
pub fn sace_estimates(
    data: &Dataset,
    draws: &PosteriorDraws,
    pairs: &[(usize, usize)],
    mode: SaceMode,
    seed: u64,
) -> Result<Vec<SaceEstimate>, EstimandError> {
    let periods = draws.layout().periods();
    for &(s, t_prime) in pairs {
        if t_prime == 0 || t_prime > s || s > periods {
            return Err(EstimandError::InvalidHorizon { s, t_prime, periods });
        }
    }
    let engine = Engine::new(data, draws)?;
    let per_draw_rows = match mode {
        SaceMode::FiniteSample => engine.finite_sample_pass(pairs, seed)?,
        SaceMode::SuperPopulation => engine.super_population_pass(pairs)?,
    };
    let total = draws.total_draws();
    let mut out = Vec::with_capacity(pairs.len());
    for (j, &(s, t_prime)) in pairs.iter().enumerate() {
        let per_draw: Vec<f64> = per_draw_rows.iter().filter_map(|row| row[j]).collect();
        let skipped = total - per_draw.len();
        if per_draw.is_empty() {
            return Err(EstimandError::AllDrawsSkipped { s, t_prime });
        }
        debug_assert!(per_draw.iter().all(|v| (-1.0..=1.0).contains(v)));
        let (mean, sd, q05, q95) = summarize(&per_draw);
        out.push(SaceEstimate {
            s,
            t_prime,
            mode,
            mean,
            sd,
            q05,
            q95,
            per_draw,
            skipped_draws: skipped,
            excess_skip_warning: skipped * 10 > total,
        });
    }
    Ok(out)
}

/// Posterior SACE_{1:s}(t') for one horizon/period pair.
pub fn impute_and_sace(
    data: &Dataset,
    draws: &PosteriorDraws,
    s: usize,
    t_prime: usize,
    mode: SaceMode,
    seed: u64,
) -> Result<SaceEstimate, EstimandError> {
    Ok(sace_estimates(data, draws, &[(s, t_prime)], mode, seed)?.remove(0))
}

/// SACE_{1:s}(t') for every t' = 1..s, sharing per-draw imputations.
pub fn sace_trajectory(
    data: &Dataset,
    draws: &PosteriorDraws,
    s: usize,
    mode: SaceMode,
    seed: u64,
) -> Result<Vec<SaceEstimate>, EstimandError> {
    let pairs: Vec<(usize, usize)> = (1..=s).map(|t| (s, t)).collect();
    sace_estimates(data, draws, &pairs, mode, seed)
}

/// Runs `f` over draw indices with deterministic output order.
fn map_draws<R: Send, F: Fn(usize) -> R + Sync + Send>(total: usize, f: F) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        (0..total).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..total).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FirmRecord;
    use crate::model::{BlockLayout, ParamVector, SlopeMode};
    use crate::rng::{standard_normal, stream_rng};
    use crate::simulation::{simulate_dataset, AssignmentLaw, CovariateLaw, GeneratorSpec};
    use alloc::format;
    use alloc::string::{String, ToString};

    fn record(id: &str, x: &[f64], w: Arm, s: &[bool], y: &[Outcome]) -> FirmRecord {
        FirmRecord { id: id.to_string(), x: x.to_vec(), w, s: s.to_vec(), y: y.to_vec() }
    }

    fn names(k: usize) -> Vec<String> {
        (1..=k).map(|j| format!("x{j}")).collect()
    }

    /// Posterior draws that just repeat the given parameter vectors.
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

    #[test]
    fn responsibilities_hand_value() {
        // (w=1, S=(1,1,1), y=(1,1,1)) at theta=0: equal outcome factors, so
        // responsibilities are sequence probabilities (1/27, 1/27, 1/18,
        // 1/12) normalized: (4, 4, 6, 9) / 23.
        let layout = BlockLayout::new(3, 1, SlopeMode::Shared);
        let theta = ParamVector::zeros(&layout);
        let r = record("1", &[1.0], Arm::Treated, &[true; 3], &[Some(true); 3]);
        let resp = membership_responsibilities(&layout, theta.as_slice(), &r).unwrap();
        let expected = [4.0 / 23.0, 4.0 / 23.0, 6.0 / 23.0, 9.0 / 23.0];
        assert_eq!(resp.len(), 4);
        for ((seq, got), want) in resp.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{seq}: {got} vs {want}");
        }
    }

    #[test]
    fn responsibilities_sum_to_one_on_random_inputs() {
        let layout = BlockLayout::new(3, 2, SlopeMode::Shared);
        let mut rng = stream_rng(55, 0);
        for trial in 0..200 {
            let theta: Vec<f64> =
                (0..layout.dim()).map(|_| 1.5 * standard_normal(&mut rng)).collect();
            let alive = rng.random_range(0..=3);
            let s: Vec<bool> = (0..3).map(|t| t < alive).collect();
            let y: Vec<Outcome> =
                s.iter().map(|&a| a.then(|| rng.random_bool(0.5))).collect();
            let w = if rng.random_bool(0.5) { Arm::Treated } else { Arm::Control };
            let x: Vec<f64> = (0..2).map(|_| f64::from(rng.random_bool(0.5))).collect();
            let r = record("1", &x, w, &s, &y);
            let resp = membership_responsibilities(&layout, &theta, &r).unwrap();
            let total: f64 = resp.iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12, "trial {trial}: {total}");
            let singleton = resp.len() == 1;
            if singleton {
                assert!((resp[0].1 - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_dataset_has_observed_proportions_and_zero_sd() {
        // Every unit has a singleton compatible set: treated all-dead units
        // are NS.NS.NS, control all-alive units are AS.AS.AS.
        let layout = BlockLayout::new(3, 1, SlopeMode::Shared);
        let mut records = Vec::new();
        for i in 0..3 {
            records.push(record(&format!("d{i}"), &[1.0], Arm::Treated, &[false; 3], &[None; 3]));
        }
        for i in 0..7 {
            records.push(record(&format!("a{i}"), &[0.0], Arm::Control, &[true; 3], &[Some(true); 3]));
        }
        let data = Dataset::new(records, names(1)).unwrap();
        // Two different parameter vectors; responsibilities stay degenerate.
        let mut rng = stream_rng(2, 0);
        let thetas: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..layout.dim()).map(|_| standard_normal(&mut rng)).collect())
            .collect();
        let draws = synthetic_draws(&layout, &thetas);
        let post = stratum_proportions(&data, &draws).unwrap();
        assert_eq!(post.rows.len(), 10);
        for row in &post.rows {
            let label = format!("{}", row.sequence);
            let expected = match label.as_str() {
                "NS.NS.NS" => 0.3,
                "AS.AS.AS" => 0.7,
                _ => 0.0,
            };
            assert!((row.mean - expected).abs() < 1e-12, "{label}");
            assert!(row.sd.abs() < 1e-12, "{label} sd {}", row.sd);
        }
    }

    #[test]
    fn proportions_approach_truth_frequencies_as_n_grows() {
        let layout = BlockLayout::new(3, 2, SlopeMode::Shared);
        let mut theta = ParamVector::zeros(&layout);
        theta.set(&layout, "g1->AS.icpt", 0.5).unwrap();
        theta.set(&layout, "g2|AS->AS.icpt", 0.8).unwrap();
        theta.set(&layout, "y1|w1,AS.icpt", 0.3).unwrap();
        let err_at = |n: usize, seed: u64| -> f64 {
            let spec = GeneratorSpec {
                theta_true: theta.clone(),
                covariate_law: CovariateLaw::Bernoulli(alloc::vec![0.5, 0.5]),
                assignment: AssignmentLaw::balanced(2),
                units: n,
                seed,
                layout: layout.clone(),
            };
            let (data, truths) = simulate_dataset(&spec).unwrap();
            let mut truth_freq = alloc::collections::BTreeMap::new();
            for t in &truths {
                *truth_freq.entry(format!("{}", t.sequence)).or_insert(0.0) += 1.0 / n as f64;
            }
            let draws = synthetic_draws(&layout, &[theta.as_slice().to_vec()]);
            let post = stratum_proportions(&data, &draws).unwrap();
            post.rows
                .iter()
                .map(|row| {
                    let truth = truth_freq.get(&format!("{}", row.sequence)).copied().unwrap_or(0.0);
                    (row.mean - truth).abs()
                })
                .fold(0.0, f64::max)
        };
        let small = err_at(500, 10);
        let large = err_at(5000, 10);
        assert!(large <= small * 0.5 + 5e-3, "error {small} -> {large}");
    }

    #[test]
    fn trajectory_matches_single_estimates_and_shares_imputations() {
        let layout = BlockLayout::new(3, 2, SlopeMode::Shared);
        let spec = GeneratorSpec {
            theta_true: ParamVector::zeros(&layout),
            covariate_law: CovariateLaw::Bernoulli(alloc::vec![0.5, 0.5]),
            assignment: AssignmentLaw::balanced(2),
            units: 150,
            seed: 9,
            layout: layout.clone(),
        };
        let (data, _) = simulate_dataset(&spec).unwrap();
        let mut rng = stream_rng(14, 0);
        let thetas: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..layout.dim()).map(|_| 0.3 * standard_normal(&mut rng)).collect())
            .collect();
        let draws = synthetic_draws(&layout, &thetas);
        let traj = sace_trajectory(&data, &draws, 3, SaceMode::FiniteSample, 77).unwrap();
        assert_eq!(traj.len(), 3);
        for (t_idx, est) in traj.iter().enumerate() {
            assert_eq!(est.t_prime, t_idx + 1);
            assert_eq!(est.s, 3);
            let single =
                impute_and_sace(&data, &draws, 3, t_idx + 1, SaceMode::FiniteSample, 77).unwrap();
            assert_eq!(est.per_draw, single.per_draw, "t'={}", t_idx + 1);
        }
        let two = sace_trajectory(&data, &draws, 2, SaceMode::FiniteSample, 77).unwrap();
        assert_eq!(two.len(), 2);
    }

    #[test]
    fn conditioning_sets_are_nested_within_each_draw() {
        let layout = BlockLayout::new(3, 1, SlopeMode::Shared);
        let spec = GeneratorSpec {
            theta_true: ParamVector::zeros(&layout),
            covariate_law: CovariateLaw::Bernoulli(alloc::vec![0.5]),
            assignment: AssignmentLaw::balanced(1),
            units: 200,
            seed: 4,
            layout: layout.clone(),
        };
        let (data, _) = simulate_dataset(&spec).unwrap();
        let target = PosteriorTarget::new(&data, layout.clone(), PriorSpec::default()).unwrap();
        let mut rng = stream_rng(6, 1);
        for m in 0..20usize {
            let theta: Vec<f64> =
                (0..layout.dim()).map(|_| 0.5 * standard_normal(&mut rng)).collect();
            let engine_data = &data;
            let imp = {
                let engine = Engine {
                    target: PosteriorTarget::new(engine_data, layout.clone(), PriorSpec::default())
                        .unwrap(),
                    data: engine_data,
                    draws: &synthetic_draws(&layout, &[theta.clone()]),
                };
                engine.impute(0, m as u64).unwrap()
            };
            let set =
                |s: usize| -> Vec<usize> {
                    imp.as_prefix
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p >= s)
                        .map(|(i, _)| i)
                        .collect()
                };
            let (s1, s2, s3) = (set(1), set(2), set(3));
            assert!(s3.iter().all(|i| s2.contains(i)));
            assert!(s2.iter().all(|i| s1.contains(i)));
            let _ = target;
        }
    }

    #[test]
    fn symmetric_arms_average_to_zero_over_imputations() {
        // Both arms share identical AS-history outcome parameters, so every
        // per-draw SACE has expectation zero over imputation randomness.
        let layout = BlockLayout::new(3, 1, SlopeMode::Shared);
        let mut theta = ParamVector::zeros(&layout);
        for (a, b) in [
            ("y1|w0,AS.icpt", "y1|w1,AS.icpt"),
            ("y2|w0,AS.AS.icpt", "y2|w1,AS.AS.icpt"),
            ("y3|w0,AS.AS.AS.icpt", "y3|w1,AS.AS.AS.icpt"),
        ] {
            theta.set(&layout, a, 0.35).unwrap();
            theta.set(&layout, b, 0.35).unwrap();
        }
        theta.set(&layout, "y2|w0,AS.AS.lag", 0.5).unwrap();
        theta.set(&layout, "y2|w1,AS.AS.lag", 0.5).unwrap();
        let spec = GeneratorSpec {
            theta_true: theta.clone(),
            covariate_law: CovariateLaw::Bernoulli(alloc::vec![0.5]),
            assignment: AssignmentLaw::balanced(1),
            units: 400,
            seed: 77,
            layout: layout.clone(),
        };
        let (data, _) = simulate_dataset(&spec).unwrap();
        let draws = synthetic_draws(&layout, &[theta.as_slice().to_vec()]);
        let mut total = 0.0;
        let reps = 200;
        for rep in 0..reps {
            let est =
                impute_and_sace(&data, &draws, 2, 2, SaceMode::FiniteSample, rep as u64).unwrap();
            total += est.mean;
        }
        let avg = total / reps as f64;
        assert!(avg.abs() < 0.02, "average over imputations {avg}");
    }

    #[test]
    fn super_population_agrees_with_finite_sample_on_model_data() {
        let layout = BlockLayout::new(3, 2, SlopeMode::Shared);
        let mut theta = ParamVector::zeros(&layout);
        theta.set(&layout, "y1|w1,AS.icpt", 0.8).unwrap();
        theta.set(&layout, "y1|w0,AS.icpt", -0.2).unwrap();
        theta.set(&layout, "g1->AS.icpt", 0.6).unwrap();
        theta.set(&layout, "beta_x.x1", 0.4).unwrap();
        let spec = GeneratorSpec {
            theta_true: theta.clone(),
            covariate_law: CovariateLaw::Bernoulli(alloc::vec![0.5, 0.5]),
            assignment: AssignmentLaw::balanced(2),
            units: 3000,
            seed: 31,
            layout: layout.clone(),
        };
        let (data, _) = simulate_dataset(&spec).unwrap();
        let draws = synthetic_draws(&layout, &[theta.as_slice().to_vec()]);
        let fs = impute_and_sace(&data, &draws, 1, 1, SaceMode::FiniteSample, 5).unwrap();
        let sp = impute_and_sace(&data, &draws, 1, 1, SaceMode::SuperPopulation, 5).unwrap();
        assert_eq!(sp.skipped_draws, 0);
        assert!((fs.mean - sp.mean).abs() < 0.04, "finite {} vs super {}", fs.mean, sp.mean);
        // The closed-form contrast at x-average is expit(0.8 + 0.4 x) -
        // expit(-0.2 + 0.4 x); both estimates should sit near it.
        let approx = 0.5 * (math::expit(0.8) - math::expit(-0.2))
            + 0.5 * (math::expit(1.2) - math::expit(0.2));
        assert!((sp.mean - approx).abs() < 0.05, "{} vs {approx}", sp.mean);
    }

    #[test]
    fn horizon_validation_and_empty_sets() {
        let layout = BlockLayout::new(3, 1, SlopeMode::Shared);
        let r = record("1", &[0.0], Arm::Treated, &[true; 3], &[Some(true); 3]);
        let data = Dataset::new_allowing_empty_arm(alloc::vec![r], names(1)).unwrap();
        let draws = synthetic_draws(&layout, &[vec![0.0; layout.dim()]]);
        assert!(matches!(
            impute_and_sace(&data, &draws, 2, 3, SaceMode::FiniteSample, 0),
            Err(EstimandError::InvalidHorizon { .. })
        ));
        assert!(matches!(
            impute_and_sace(&data, &draws, 4, 1, SaceMode::FiniteSample, 0),
            Err(EstimandError::InvalidHorizon { .. })
        ));

        // A treated unit dead everywhere can never be AS: all draws skip.
        let dead = record("1", &[0.0], Arm::Treated, &[false; 3], &[None; 3]);
        let data = Dataset::new_allowing_empty_arm(alloc::vec![dead], names(1)).unwrap();
        assert!(matches!(
            impute_and_sace(&data, &draws, 1, 1, SaceMode::FiniteSample, 0),
            Err(EstimandError::AllDrawsSkipped { .. })
        ));
    }
}
