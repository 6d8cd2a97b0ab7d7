//! Parameter layout, priors, and the probability submodels.
//!
//! Stratum membership over time is modeled as a chain of multinomial /
//! logistic regressions, one block per distinct monotone history: a history
//! ending in AS (or the empty history at t = 1) gets a multinomial block over
//! {AS, CS, NS}, a history ending in CS gets a binary block over {CS, NS},
//! and NS is absorbing with no parameters. NS is the baseline destination in
//! every block, with its logit fixed at zero.
//!
//! Outcomes follow one logistic regression per (arm, stratum history) pair
//! for which the potential outcome is defined, with an intercept, a lag
//! coefficient on the previous-period outcome for t >= 2, and covariate
//! slopes that are shared across all outcome models by default.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::strata::{enumerate_sequences, Arm, Stratum, StratumSequence};

/// Independent zero-mean Gaussian priors; one scale for stratum-model
/// coefficients and one for outcome-model coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PriorSpec {
    /// Standard deviation for all stratum-transition coefficients.
    pub stratum_scale: f64,
    /// Standard deviation for all outcome coefficients.
    pub outcome_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec { stratum_scale: 2.5, outcome_scale: 2.0 }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.stratum_scale > 0.0 && self.outcome_scale > 0.0 {
            Ok(())
        } else {
            Err(ModelError::InvalidPriorScale)
        }
    }
}

/// Whether outcome models share one covariate slope vector or carry their
/// own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SlopeMode {
    /// One shared slope vector for all outcome models (the default).
    #[default]
    Shared,
    /// Separate slopes per outcome model, for sensitivity analysis.
    PerModel,
}

/// One stratum-transition regression block.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransitionBlock {
    /// Destination period (1-based).
    pub period: usize,
    /// Stratum history before the transition; empty at t = 1.
    pub history: Vec<Stratum>,
    /// Destinations carrying parameters (everything but the NS baseline).
    pub destinations: Vec<Stratum>,
    /// Offset of the first coefficient in the flat parameter vector.
    pub offset: usize,
}

impl TransitionBlock {
    /// Coefficients per destination: intercept plus K slopes.
    #[inline]
    pub fn stride(k: usize) -> usize {
        k + 1
    }

    pub fn len(&self, k: usize) -> usize {
        self.destinations.len() * Self::stride(k)
    }
}

/// One outcome regression block.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OutcomeBlock {
    /// Outcome period (1-based).
    pub period: usize,
    pub arm: Arm,
    /// Stratum history through the outcome period (length = period).
    pub history: Vec<Stratum>,
    pub offset: usize,
    /// Present for t >= 2: coefficient on the previous-period outcome.
    pub has_lag: bool,
    /// Present in [`SlopeMode::PerModel`] layouts.
    pub own_slopes: bool,
}

impl OutcomeBlock {
    pub fn len(&self, k: usize) -> usize {
        1 + usize::from(self.has_lag) + if self.own_slopes { k } else { 0 }
    }

    #[inline]
    pub fn lag_offset(&self) -> Option<usize> {
        self.has_lag.then_some(self.offset + 1)
    }

    #[inline]
    pub fn slopes_offset(&self) -> Option<usize> {
        self.own_slopes.then_some(self.offset + 1 + usize::from(self.has_lag))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    /// History contains DS or an invalid transition.
    InvalidHistory,
    /// The requested potential outcome is undefined (unit dead under that
    /// arm at that period).
    UndefinedOutcome { period: usize, arm: Arm },
    /// y_prev supplied for t = 1 or missing for t >= 2.
    LagMismatch { period: usize },
    DimensionMismatch { expected: usize, found: usize },
    CovariateMismatch { expected: usize, found: usize },
    InvalidPriorScale,
    PeriodOutOfRange { period: usize },
    UnknownCoordinate { name: String },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidHistory => write!(f, "invalid monotone stratum history"),
            ModelError::UndefinedOutcome { period, arm } => {
                write!(f, "potential outcome undefined at period {period} under arm {arm}")
            }
            ModelError::LagMismatch { period } => {
                write!(f, "previous outcome must be supplied iff period >= 2 (period {period})")
            }
            ModelError::DimensionMismatch { expected, found } => {
                write!(f, "parameter vector has dimension {found}, layout expects {expected}")
            }
            ModelError::CovariateMismatch { expected, found } => {
                write!(f, "covariate vector has length {found}, layout expects {expected}")
            }
            ModelError::InvalidPriorScale => write!(f, "prior scales must be strictly positive"),
            ModelError::PeriodOutOfRange { period } => {
                write!(f, "period {period} outside the layout's range")
            }
            ModelError::UnknownCoordinate { name } => {
                write!(f, "no coordinate named {name} in the layout")
            }
        }
    }
}

impl core::error::Error for ModelError {}

/// Flat parameter layout: every transition and outcome block with its offset
/// plus per-coordinate names, in a fixed canonical order so draws files and
/// indices are reproducible.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockLayout {
    periods: usize,
    covariates: usize,
    slope_mode: SlopeMode,
    transition_blocks: Vec<TransitionBlock>,
    outcome_blocks: Vec<OutcomeBlock>,
    shared_slope_offset: Option<usize>,
    dim: usize,
    names: Vec<String>,
}

pub(crate) fn history_label(history: &[Stratum]) -> String {
    let mut s = String::new();
    for (i, g) in history.iter().enumerate() {
        if i > 0 {
            s.push('.');
        }
        s.push_str(g.label());
    }
    s
}

impl BlockLayout {
    /// Layout for the monotone model with `periods` periods and `covariates`
    /// covariate slots.
    pub fn new(periods: usize, covariates: usize, slope_mode: SlopeMode) -> BlockLayout {
        assert!(periods >= 1, "layout needs at least one period");
        let k = covariates;
        let mut names = Vec::new();
        let mut offset = 0usize;

        let mut transition_blocks = Vec::new();
        for t in 1..=periods {
            let histories: Vec<Vec<Stratum>> = if t == 1 {
                alloc::vec![Vec::new()]
            } else {
                enumerate_sequences(t - 1, true)
                    .expect("t >= 2")
                    .into_iter()
                    .map(|s| s.labels().to_vec())
                    .filter(|h| matches!(h.last(), Some(Stratum::As) | Some(Stratum::Cs)))
                    .collect()
            };
            for history in histories {
                let destinations: Vec<Stratum> = match history.last() {
                    None | Some(Stratum::As) => alloc::vec![Stratum::As, Stratum::Cs],
                    Some(Stratum::Cs) => alloc::vec![Stratum::Cs],
                    _ => unreachable!("filtered above"),
                };
                let block_tag = if history.is_empty() {
                    format!("g{t}")
                } else {
                    format!("g{t}|{}", history_label(&history))
                };
                for dest in &destinations {
                    names.push(format!("{block_tag}->{}.icpt", dest.label()));
                    for j in 1..=k {
                        names.push(format!("{block_tag}->{}.x{j}", dest.label()));
                    }
                }
                transition_blocks.push(TransitionBlock { period: t, history, destinations, offset });
                offset = names.len();
            }
        }

        let mut outcome_blocks = Vec::new();
        for t in 1..=periods {
            for arm in [Arm::Control, Arm::Treated] {
                let histories: Vec<Vec<Stratum>> = enumerate_sequences(t, true)
                    .expect("t >= 1")
                    .into_iter()
                    .map(|s| s.labels().to_vec())
                    .filter(|h| h.last().is_some_and(|g| g.survives(arm)))
                    .collect();
                for history in histories {
                    let tag = format!("y{t}|w{arm},{}", history_label(&history));
                    names.push(format!("{tag}.icpt"));
                    let has_lag = t >= 2;
                    if has_lag {
                        names.push(format!("{tag}.lag"));
                    }
                    let own_slopes = slope_mode == SlopeMode::PerModel;
                    if own_slopes {
                        for j in 1..=k {
                            names.push(format!("{tag}.x{j}"));
                        }
                    }
                    outcome_blocks.push(OutcomeBlock {
                        period: t,
                        arm,
                        history,
                        offset,
                        has_lag,
                        own_slopes,
                    });
                    offset = names.len();
                }
            }
        }

        let shared_slope_offset = match slope_mode {
            SlopeMode::Shared if k > 0 => {
                for j in 1..=k {
                    names.push(format!("beta_x.x{j}"));
                }
                Some(offset)
            }
            _ => None,
        };

        BlockLayout {
            periods,
            covariates,
            slope_mode,
            transition_blocks,
            outcome_blocks,
            shared_slope_offset,
            dim: names.len(),
            names,
        }
    }

    /// Anonymous layout for swap-in sampler targets: `dim` coordinates named
    /// `p1..pdim`, all treated as outcome-scale for prior purposes.
    pub fn anonymous(dim: usize) -> BlockLayout {
        BlockLayout {
            periods: 0,
            covariates: 0,
            slope_mode: SlopeMode::Shared,
            transition_blocks: Vec::new(),
            outcome_blocks: Vec::new(),
            shared_slope_offset: None,
            dim,
            names: (1..=dim).map(|i| format!("p{i}")).collect(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn periods(&self) -> usize {
        self.periods
    }

    #[inline]
    pub fn covariates(&self) -> usize {
        self.covariates
    }

    #[inline]
    pub fn slope_mode(&self) -> SlopeMode {
        self.slope_mode
    }

    #[inline]
    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn transition_blocks(&self) -> &[TransitionBlock] {
        &self.transition_blocks
    }

    #[inline]
    pub fn outcome_blocks(&self) -> &[OutcomeBlock] {
        &self.outcome_blocks
    }

    #[inline]
    pub fn shared_slope_offset(&self) -> Option<usize> {
        self.shared_slope_offset
    }

    pub fn transition_block(&self, history: &[Stratum]) -> Option<&TransitionBlock> {
        self.transition_blocks.iter().find(|b| b.history == history)
    }

    pub fn outcome_block(&self, arm: Arm, history: &[Stratum]) -> Option<&OutcomeBlock> {
        self.outcome_blocks.iter().find(|b| b.arm == arm && b.history == history)
    }

    /// True when the coordinate belongs to a stratum-transition block.
    pub fn is_transition_coordinate(&self, index: usize) -> bool {
        self.transition_blocks
            .iter()
            .any(|b| index >= b.offset && index < b.offset + b.len(self.covariates))
    }

    /// Per-coordinate prior standard deviations.
    pub fn coordinate_scales(&self, prior: &PriorSpec) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                if self.is_transition_coordinate(i) {
                    prior.stratum_scale
                } else {
                    prior.outcome_scale
                }
            })
            .collect()
    }

    pub fn check_dim(&self, theta: &[f64]) -> Result<(), ModelError> {
        if theta.len() == self.dim {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch { expected: self.dim, found: theta.len() })
        }
    }

    fn check_covariates(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() == self.covariates {
            Ok(())
        } else {
            Err(ModelError::CovariateMismatch { expected: self.covariates, found: x.len() })
        }
    }

    /// Named view of a flat vector, in layout order.
    pub fn unpack(&self, theta: &[f64]) -> Result<Vec<(String, f64)>, ModelError> {
        self.check_dim(theta)?;
        Ok(self.names.iter().cloned().zip(theta.iter().copied()).collect())
    }

    /// Inverse of [`BlockLayout::unpack`]; entries must appear in layout
    /// order with matching names.
    pub fn pack(&self, entries: &[(String, f64)]) -> Result<Vec<f64>, ModelError> {
        if entries.len() != self.dim {
            return Err(ModelError::DimensionMismatch { expected: self.dim, found: entries.len() });
        }
        let mut out = Vec::with_capacity(self.dim);
        for (i, (name, value)) in entries.iter().enumerate() {
            if name != &self.names[i] {
                return Err(ModelError::UnknownCoordinate { name: name.clone() });
            }
            out.push(*value);
        }
        Ok(out)
    }

    pub fn coordinate_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Flat parameter vector tied to a layout dimension.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: &BlockLayout) -> ParamVector {
        ParamVector { values: alloc::vec![0.0; layout.dim()] }
    }

    pub fn from_values(layout: &BlockLayout, values: Vec<f64>) -> Result<ParamVector, ModelError> {
        layout.check_dim(&values)?;
        Ok(ParamVector { values })
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Sets the coordinate with the given layout name.
    pub fn set(&mut self, layout: &BlockLayout, name: &str, value: f64) -> Result<(), ModelError> {
        let idx = layout
            .coordinate_index(name)
            .ok_or_else(|| ModelError::UnknownCoordinate { name: String::from(name) })?;
        self.values[idx] = value;
        Ok(())
    }
}

/// Destinations permitted after a history (its last stratum), in canonical
/// order with the NS baseline last.
pub fn permitted_destinations(last: Option<Stratum>) -> Result<&'static [Stratum], ModelError> {
    match last {
        None | Some(Stratum::As) => Ok(&[Stratum::As, Stratum::Cs, Stratum::Ns]),
        Some(Stratum::Cs) => Ok(&[Stratum::Cs, Stratum::Ns]),
        Some(Stratum::Ns) => Ok(&[Stratum::Ns]),
        Some(Stratum::Ds) => Err(ModelError::InvalidHistory),
    }
}

fn validate_history(history: &[Stratum]) -> Result<(), ModelError> {
    if history.iter().any(|&g| g == Stratum::Ds) {
        return Err(ModelError::InvalidHistory);
    }
    if history.windows(2).any(|p| !p[0].can_transition_to(p[1])) {
        return Err(ModelError::InvalidHistory);
    }
    Ok(())
}

#[inline]
fn dot_with_intercept(theta: &[f64], offset: usize, x: &[f64]) -> f64 {
    let mut acc = theta[offset];
    for (j, &xj) in x.iter().enumerate() {
        acc += theta[offset + 1 + j] * xj;
    }
    acc
}

/// Log transition probabilities over the permitted destinations for the
/// given history, in the order returned by [`permitted_destinations`].
pub fn transition_log_probs(
    layout: &BlockLayout,
    theta: &[f64],
    history: &[Stratum],
    x: &[f64],
) -> Result<Vec<(Stratum, f64)>, ModelError> {
    layout.check_dim(theta)?;
    layout.check_covariates(x)?;
    validate_history(history)?;
    let period = history.len() + 1;
    if period > layout.periods() {
        return Err(ModelError::PeriodOutOfRange { period });
    }
    let dests = permitted_destinations(history.last().copied())?;
    if dests.len() == 1 {
        // Absorbed in NS: probability one, no parameters.
        return Ok(alloc::vec![(Stratum::Ns, 0.0)]);
    }
    let block = layout.transition_block(history).ok_or(ModelError::InvalidHistory)?;
    let stride = TransitionBlock::stride(layout.covariates());
    let mut logits: Vec<f64> = Vec::with_capacity(dests.len());
    for (i, _) in block.destinations.iter().enumerate() {
        logits.push(dot_with_intercept(theta, block.offset + i * stride, x));
    }
    logits.push(0.0); // NS baseline
    let lse = math::log_sum_exp(&logits);
    Ok(dests.iter().zip(logits).map(|(&d, l)| (d, l - lse)).collect())
}

/// Transition probabilities over permitted destinations; sums to one.
pub fn stratum_transition_probs(
    layout: &BlockLayout,
    theta: &[f64],
    history: &[Stratum],
    x: &[f64],
) -> Result<Vec<(Stratum, f64)>, ModelError> {
    Ok(transition_log_probs(layout, theta, history, x)?
        .into_iter()
        .map(|(d, lp)| (d, math::exp(lp)))
        .collect())
}

/// Log probability of a full stratum sequence: the product of its chained
/// transition probabilities.
pub fn log_sequence_prob(
    layout: &BlockLayout,
    theta: &[f64],
    seq: &StratumSequence,
    x: &[f64],
) -> Result<f64, ModelError> {
    if seq.labels().iter().any(|&g| g == Stratum::Ds) {
        return Err(ModelError::InvalidHistory);
    }
    if seq.periods() != layout.periods() {
        return Err(ModelError::PeriodOutOfRange { period: seq.periods() });
    }
    let mut total = 0.0;
    for t in 0..seq.periods() {
        let history = &seq.labels()[..t];
        let dest = seq.labels()[t];
        let log_probs = transition_log_probs(layout, theta, history, x)?;
        let lp = log_probs
            .iter()
            .find(|(d, _)| *d == dest)
            .map(|(_, lp)| *lp)
            .ok_or(ModelError::InvalidHistory)?;
        total += lp;
    }
    Ok(total)
}

pub fn sequence_prob(
    layout: &BlockLayout,
    theta: &[f64],
    seq: &StratumSequence,
    x: &[f64],
) -> Result<f64, ModelError> {
    Ok(math::exp(log_sequence_prob(layout, theta, seq, x)?))
}

/// Logit of P(Y_t(w) = 1) for a unit with the given stratum history prefix.
pub fn outcome_logit(
    layout: &BlockLayout,
    theta: &[f64],
    period: usize,
    arm: Arm,
    prefix: &[Stratum],
    y_prev: Option<bool>,
    x: &[f64],
) -> Result<f64, ModelError> {
    layout.check_dim(theta)?;
    layout.check_covariates(x)?;
    validate_history(prefix)?;
    if period == 0 || period > layout.periods() || prefix.len() < period {
        return Err(ModelError::PeriodOutOfRange { period });
    }
    let history = &prefix[..period];
    let current = history[period - 1];
    if !current.survives(arm) {
        return Err(ModelError::UndefinedOutcome { period, arm });
    }
    if (period >= 2) != y_prev.is_some() {
        return Err(ModelError::LagMismatch { period });
    }
    let block = layout
        .outcome_block(arm, history)
        .ok_or(ModelError::UndefinedOutcome { period, arm })?;
    let mut eta = theta[block.offset];
    if let (Some(lag_off), Some(true)) = (block.lag_offset(), y_prev) {
        eta += theta[lag_off];
    }
    match (block.slopes_offset(), layout.shared_slope_offset()) {
        (Some(off), _) | (None, Some(off)) => {
            for (j, &xj) in x.iter().enumerate() {
                eta += theta[off + j] * xj;
            }
        }
        (None, None) => {}
    }
    Ok(eta)
}

/// P(Y_t(w) = 1 | history, y_prev, x).
pub fn outcome_prob(
    layout: &BlockLayout,
    theta: &[f64],
    period: usize,
    arm: Arm,
    prefix: &[Stratum],
    y_prev: Option<bool>,
    x: &[f64],
) -> Result<f64, ModelError> {
    Ok(math::expit(outcome_logit(layout, theta, period, arm, prefix, y_prev, x)?))
}

/// Sum of independent Gaussian log densities with block-appropriate scales.
pub fn log_prior(layout: &BlockLayout, theta: &[f64], prior: &PriorSpec) -> Result<f64, ModelError> {
    layout.check_dim(theta)?;
    prior.validate()?;
    let scales = layout.coordinate_scales(prior);
    let mut total = 0.0;
    for (&t, &s) in theta.iter().zip(&scales) {
        total += -0.5 * (math::LN_2PI + 2.0 * math::ln(s)) - t * t / (2.0 * s * s);
    }
    Ok(total)
}

/// Adds the prior gradient (-theta / scale^2 per coordinate) into `grad`.
pub fn add_grad_log_prior(
    layout: &BlockLayout,
    theta: &[f64],
    prior: &PriorSpec,
    grad: &mut [f64],
) -> Result<(), ModelError> {
    layout.check_dim(theta)?;
    layout.check_dim(grad)?;
    prior.validate()?;
    let scales = layout.coordinate_scales(prior);
    for i in 0..theta.len() {
        grad[i] += -theta[i] / (scales[i] * scales[i]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strata::parse_sequence;
    use alloc::vec;

    fn seq(s: &str) -> StratumSequence {
        parse_sequence(s, true).unwrap()
    }

    #[test]
    fn dimension_counts_reference_configuration() {
        // T=3, K covariates: 3 multinomial blocks of 2(K+1), 3 binary blocks
        // of (K+1); 12 outcome intercepts, 9 lag coefficients, K shared
        // slopes.
        for k in [0usize, 3, 4, 12] {
            let layout = BlockLayout::new(3, k, SlopeMode::Shared);
            let expected = 3 * 2 * (k + 1) + 3 * (k + 1) + 12 + 9 + k;
            assert_eq!(layout.dim(), expected, "K={k}");
            assert_eq!(layout.outcome_blocks().len(), 12);
            assert_eq!(layout.outcome_blocks().iter().filter(|b| b.has_lag).count(), 9);
        }
        let per_model = BlockLayout::new(3, 4, SlopeMode::PerModel);
        assert_eq!(per_model.dim(), 3 * 2 * 5 + 3 * 5 + 12 + 9 + 12 * 4);
    }

    #[test]
    fn twelve_outcome_blocks_match_the_model_list() {
        let layout = BlockLayout::new(3, 2, SlopeMode::Shared);
        let tags: Vec<(usize, Arm, String)> = layout
            .outcome_blocks()
            .iter()
            .map(|b| (b.period, b.arm, history_label(&b.history)))
            .collect();
        let expected = [
            (1, Arm::Control, "AS"),
            (1, Arm::Treated, "AS"),
            (1, Arm::Treated, "CS"),
            (2, Arm::Control, "AS.AS"),
            (2, Arm::Treated, "AS.AS"),
            (2, Arm::Treated, "AS.CS"),
            (2, Arm::Treated, "CS.CS"),
            (3, Arm::Control, "AS.AS.AS"),
            (3, Arm::Treated, "AS.AS.AS"),
            (3, Arm::Treated, "AS.AS.CS"),
            (3, Arm::Treated, "AS.CS.CS"),
            (3, Arm::Treated, "CS.CS.CS"),
        ];
        let expected: Vec<(usize, Arm, String)> =
            expected.iter().map(|(t, a, h)| (*t, *a, String::from(*h))).collect();
        assert_eq!(tags, expected);
    }

    #[test]
    fn zero_theta_gives_uniform_transitions() {
        let layout = BlockLayout::new(3, 2, SlopeMode::Shared);
        let theta = ParamVector::zeros(&layout);
        let x = [0.3, -1.0];
        let p = stratum_transition_probs(&layout, theta.as_slice(), &[], &x).unwrap();
        assert_eq!(p.len(), 3);
        for (_, prob) in &p {
            assert!((prob - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = stratum_transition_probs(&layout, theta.as_slice(), &[Stratum::Cs], &x).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p[0].1 - 0.5).abs() < 1e-15);
        let p = stratum_transition_probs(&layout, theta.as_slice(), &[Stratum::Ns], &x).unwrap();
        assert_eq!(p, vec![(Stratum::Ns, 1.0)]);
    }

    #[test]
    fn softmax_hand_value() {
        // Intercept 1 on AS|AS at t=2, everything else zero:
        // softmax(1, 0, 0) = (0.5761, 0.2119, 0.2119).
        let layout = BlockLayout::new(3, 2, SlopeMode::Shared);
        let mut theta = ParamVector::zeros(&layout);
        theta.set(&layout, "g2|AS->AS.icpt", 1.0).unwrap();
        let x = [1.0, 0.0];
        let p = stratum_transition_probs(&layout, theta.as_slice(), &[Stratum::As], &x).unwrap();
        assert!((p[0].1 - 0.57611688).abs() < 1e-7);
        assert!((p[1].1 - 0.21194156).abs() < 1e-7);
        assert!((p[2].1 - 0.21194156).abs() < 1e-7);
    }

    #[test]
    fn softmax_shift_invariance() {
        // Probabilities equal the softmax of logits shifted by any constant
        // (the NS baseline convention is one member of that family).
        let layout = BlockLayout::new(3, 1, SlopeMode::Shared);
        let mut theta = ParamVector::zeros(&layout);
        theta.set(&layout, "g1->AS.icpt", 0.7).unwrap();
        theta.set(&layout, "g1->CS.icpt", -0.4).unwrap();
        theta.set(&layout, "g1->AS.x1", 0.2).unwrap();
        let x = [0.5];
        let p = stratum_transition_probs(&layout, theta.as_slice(), &[], &x).unwrap();
        let shift = 3.21;
        let logits = [0.7 + 0.2 * 0.5 + shift, -0.4 + shift, shift];
        let lse = math::log_sum_exp(&logits);
        for (i, (_, prob)) in p.iter().enumerate() {
            assert!((prob - math::exp(logits[i] - lse)).abs() < 1e-14);
        }
    }

    #[test]
    fn sequence_probs_at_zero_theta() {
        let layout = BlockLayout::new(3, 2, SlopeMode::Shared);
        let theta = ParamVector::zeros(&layout);
        let x = [0.0, 1.0];
        let cases = [
            ("NS.NS.NS", 1.0 / 3.0),
            ("AS.AS.AS", 1.0 / 27.0),
            ("CS.CS.NS", 1.0 / 12.0),
            ("AS.AS.CS", 1.0 / 27.0),
            ("AS.CS.CS", 1.0 / 18.0),
            ("CS.CS.CS", 1.0 / 12.0),
        ];
        for (s, expected) in cases {
            let p = sequence_prob(&layout, theta.as_slice(), &seq(s), &x).unwrap();
            assert!((p - expected).abs() < 1e-14, "{s}: {p} vs {expected}");
        }
    }

    #[test]
    fn sequence_probs_sum_to_one() {
        let layout = BlockLayout::new(3, 3, SlopeMode::Shared);
        let mut rng = crate::rng::stream_rng(11, 0);
        for _ in 0..50 {
            let theta: Vec<f64> =
                (0..layout.dim()).map(|_| 2.0 * crate::rng::standard_normal(&mut rng)).collect();
            let x: Vec<f64> = (0..3).map(|_| crate::rng::standard_normal(&mut rng)).collect();
            let total: f64 = enumerate_sequences(3, true)
                .unwrap()
                .iter()
                .map(|s| sequence_prob(&layout, &theta, s, &x).unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "sum {total}");
        }
    }

    #[test]
    fn outcome_probabilities() {
        let layout = BlockLayout::new(3, 2, SlopeMode::Shared);
        let mut theta = ParamVector::zeros(&layout);
        let x = [0.4, -0.3];
        // t=1, theta=0 -> 0.5.
        let p = outcome_prob(
            &layout,
            theta.as_slice(),
            1,
            Arm::Treated,
            seq("AS.AS.AS").labels(),
            None,
            &x,
        )
        .unwrap();
        assert!((p - 0.5).abs() < 1e-15);

        // Hand-evaluated logistic: icpt 0.3 + lag 0.7 with y_prev = 1.
        theta.set(&layout, "y2|w1,AS.CS.icpt", 0.3).unwrap();
        theta.set(&layout, "y2|w1,AS.CS.lag", 0.7).unwrap();
        let p = outcome_prob(
            &layout,
            theta.as_slice(),
            2,
            Arm::Treated,
            seq("AS.CS.CS").labels(),
            Some(true),
            &x,
        )
        .unwrap();
        assert!((p - 0.7310585786300049).abs() < 1e-12);

        // Undefined potential outcome: control arm, CS prefix.
        let err = outcome_prob(
            &layout,
            theta.as_slice(),
            2,
            Arm::Control,
            seq("CS.CS.CS").labels(),
            Some(false),
            &x,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::UndefinedOutcome { period: 2, arm: Arm::Control }));

        // Lag handling mismatches.
        assert!(matches!(
            outcome_prob(
                &layout,
                theta.as_slice(),
                1,
                Arm::Treated,
                seq("AS.AS.AS").labels(),
                Some(true),
                &x
            ),
            Err(ModelError::LagMismatch { period: 1 })
        ));
        assert!(matches!(
            outcome_prob(&layout, theta.as_slice(), 2, Arm::Treated, seq("AS.AS.AS").labels(), None, &x),
            Err(ModelError::LagMismatch { period: 2 })
        ));
    }

    #[test]
    fn outcome_monotone_in_intercept_and_lag() {
        let layout = BlockLayout::new(3, 1, SlopeMode::Shared);
        let x = [0.2];
        let mut last = 0.0;
        for step in 0..8 {
            let mut theta = ParamVector::zeros(&layout);
            theta.set(&layout, "y2|w1,AS.AS.icpt", -2.0 + step as f64 * 0.5).unwrap();
            theta.set(&layout, "y2|w1,AS.AS.lag", 0.25 * step as f64).unwrap();
            let p = outcome_prob(
                &layout,
                theta.as_slice(),
                2,
                Arm::Treated,
                seq("AS.AS.AS").labels(),
                Some(true),
                &x,
            )
            .unwrap();
            assert!(p > 0.0 && p < 1.0);
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn shared_vs_per_model_slopes() {
        let shared = BlockLayout::new(2, 2, SlopeMode::Shared);
        let mut theta = ParamVector::zeros(&shared);
        theta.set(&shared, "beta_x.x1", 1.5).unwrap();
        let x = [1.0, 0.0];
        // The shared slope feeds every outcome model.
        for (arm, hist) in
            [(Arm::Treated, "AS.AS"), (Arm::Treated, "CS.CS"), (Arm::Control, "AS.AS")]
        {
            let p = outcome_prob(&shared, theta.as_slice(), 2, arm, seq(hist).labels(), Some(false), &x)
                .unwrap();
            assert!((p - math::expit(1.5)).abs() < 1e-14, "{arm} {hist}");
        }

        let per_model = BlockLayout::new(2, 2, SlopeMode::PerModel);
        let mut theta = ParamVector::zeros(&per_model);
        theta.set(&per_model, "y1|w1,AS.x1", 2.0).unwrap();
        let p1 =
            outcome_prob(&per_model, theta.as_slice(), 1, Arm::Treated, seq("AS.AS").labels(), None, &x)
                .unwrap();
        let p2 =
            outcome_prob(&per_model, theta.as_slice(), 1, Arm::Treated, seq("CS.CS").labels(), None, &x)
                .unwrap();
        assert!((p1 - math::expit(2.0)).abs() < 1e-14);
        assert!((p2 - 0.5).abs() < 1e-14);
    }

    #[test]
    fn log_prior_matches_naive_oracle() {
        let layout = BlockLayout::new(3, 4, SlopeMode::Shared);
        let prior = PriorSpec::default();
        let mut rng = crate::rng::stream_rng(5, 3);
        let theta: Vec<f64> =
            (0..layout.dim()).map(|_| 3.0 * crate::rng::standard_normal(&mut rng)).collect();
        let scales = layout.coordinate_scales(&prior);
        let naive: f64 = theta
            .iter()
            .zip(&scales)
            .map(|(&t, &s)| {
                let var = s * s;
                -0.5 * (math::LN_2PI + math::ln(var)) - t * t / (2.0 * var)
            })
            .sum();
        let got = log_prior(&layout, &theta, &prior).unwrap();
        assert!((got - naive).abs() < 1e-10);

        // At the mode, doubling all scales lowers the density by d*ln(2).
        let zeros = vec![0.0; layout.dim()];
        let at_zero = log_prior(&layout, &zeros, &prior).unwrap();
        let doubled = PriorSpec { stratum_scale: 5.0, outcome_scale: 4.0 };
        let at_zero_doubled = log_prior(&layout, &zeros, &doubled).unwrap();
        let d = layout.dim() as f64;
        assert!((at_zero_doubled - (at_zero - d * math::ln(2.0))).abs() < 1e-9);
    }

    #[test]
    fn prior_gradient_is_gaussian_pull() {
        let layout = BlockLayout::new(2, 1, SlopeMode::Shared);
        let prior = PriorSpec::default();
        let theta: Vec<f64> = (0..layout.dim()).map(|i| i as f64 * 0.1 - 0.4).collect();
        let mut grad = vec![0.0; layout.dim()];
        add_grad_log_prior(&layout, &theta, &prior, &mut grad).unwrap();
        let scales = layout.coordinate_scales(&prior);
        for i in 0..layout.dim() {
            assert!((grad[i] + theta[i] / (scales[i] * scales[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn pack_unpack_roundtrip_is_bit_exact() {
        let layout = BlockLayout::new(3, 3, SlopeMode::Shared);
        let mut rng = crate::rng::stream_rng(19, 1);
        let theta: Vec<f64> = (0..layout.dim())
            .map(|_| 1e3 * crate::rng::standard_normal(&mut rng) + 1e-9)
            .collect();
        let unpacked = layout.unpack(&theta).unwrap();
        let packed = layout.pack(&unpacked).unwrap();
        assert_eq!(theta.len(), packed.len());
        for (a, b) in theta.iter().zip(&packed) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn invalid_histories_are_rejected() {
        let layout = BlockLayout::new(3, 1, SlopeMode::Shared);
        let theta = ParamVector::zeros(&layout);
        let x = [0.0];
        assert!(matches!(
            transition_log_probs(&layout, theta.as_slice(), &[Stratum::Ds], &x),
            Err(ModelError::InvalidHistory)
        ));
        assert!(matches!(
            transition_log_probs(&layout, theta.as_slice(), &[Stratum::Ns, Stratum::As], &x),
            Err(ModelError::InvalidHistory)
        ));
        assert!(matches!(
            transition_log_probs(&layout, theta.as_slice(), &[Stratum::As], &[0.0, 1.0]),
            Err(ModelError::CovariateMismatch { expected: 1, found: 2 })
        ));
        let bad_dim = vec![0.0; layout.dim() + 1];
        assert!(matches!(
            transition_log_probs(&layout, &bad_dim, &[Stratum::As], &x),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }
}
