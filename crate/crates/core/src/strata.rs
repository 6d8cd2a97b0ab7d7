//! Longitudinal principal strata: enumeration, transition rules, and the map
//! from observed (arm, survival path) cells to compatible stratum sequences.
//!
//! A stratum at a single period encodes the pair of potential survival
//! statuses (control, treated): AS = (1,1), CS = (0,1), NS = (0,0),
//! DS = (1,0). Death is absorbing under each arm separately, which restricts
//! the per-period transitions; monotonicity (treatment never harms survival)
//! additionally removes DS.

use alloc::vec::Vec;
use core::fmt;

/// Treatment arm indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn from_index(w: usize) -> Option<Arm> {
        match w {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }

    #[inline]
    pub fn other(self) -> Arm {
        match self {
            Arm::Control => Arm::Treated,
            Arm::Treated => Arm::Control,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Principal stratum at one period. Variant order defines the canonical
/// label order AS < CS < DS < NS used everywhere for sorting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Stratum {
    As,
    Cs,
    Ds,
    Ns,
}

pub const ALL_STRATA: [Stratum; 4] = [Stratum::As, Stratum::Cs, Stratum::Ds, Stratum::Ns];
pub const MONOTONE_STRATA: [Stratum; 3] = [Stratum::As, Stratum::Cs, Stratum::Ns];

impl Stratum {
    /// Potential survival under the given arm.
    #[inline]
    pub fn survives(self, arm: Arm) -> bool {
        match (self, arm) {
            (Stratum::As, _) => true,
            (Stratum::Cs, Arm::Treated) => true,
            (Stratum::Cs, Arm::Control) => false,
            (Stratum::Ds, Arm::Control) => true,
            (Stratum::Ds, Arm::Treated) => false,
            (Stratum::Ns, _) => false,
        }
    }

    /// Whether `next` may follow `self` (death absorbing under each arm).
    #[inline]
    pub fn can_transition_to(self, next: Stratum) -> bool {
        (!next.survives(Arm::Control) || self.survives(Arm::Control))
            && (!next.survives(Arm::Treated) || self.survives(Arm::Treated))
    }

    pub fn label(self) -> &'static str {
        match self {
            Stratum::As => "AS",
            Stratum::Cs => "CS",
            Stratum::Ds => "DS",
            Stratum::Ns => "NS",
        }
    }

    pub fn parse(s: &str) -> Option<Stratum> {
        match s {
            "AS" => Some(Stratum::As),
            "CS" => Some(Stratum::Cs),
            "DS" => Some(Stratum::Ds),
            "NS" => Some(Stratum::Ns),
            _ => None,
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A length-T sequence of per-period strata, e.g. `AS.CS.CS`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StratumSequence {
    labels: Vec<Stratum>,
    monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StrataError {
    /// Enumeration over zero periods was requested.
    ZeroPeriods,
    /// A sequence violates the absorbing-death transition rules.
    InvalidTransition { period: usize, from: Stratum, to: Stratum },
    /// A DS label appeared in a monotone sequence.
    DefiantUnderMonotonicity { period: usize },
    /// Observed survival indicators increase over time.
    NonAbsorbingSurvival,
}

impl fmt::Display for StrataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrataError::ZeroPeriods => write!(f, "period count must be at least 1"),
            StrataError::InvalidTransition { period, from, to } => {
                write!(f, "invalid stratum transition {from} -> {to} at period {period}")
            }
            StrataError::DefiantUnderMonotonicity { period } => {
                write!(f, "DS stratum at period {period} is not allowed under monotonicity")
            }
            StrataError::NonAbsorbingSurvival => {
                write!(f, "survival indicators must be non-increasing over time")
            }
        }
    }
}

impl core::error::Error for StrataError {}

impl StratumSequence {
    /// Validates the transition rules (and the DS exclusion when
    /// `monotone` is set) before constructing the sequence.
    pub fn new(labels: Vec<Stratum>, monotone: bool) -> Result<StratumSequence, StrataError> {
        if labels.is_empty() {
            return Err(StrataError::ZeroPeriods);
        }
        if monotone {
            if let Some(t) = labels.iter().position(|&g| g == Stratum::Ds) {
                return Err(StrataError::DefiantUnderMonotonicity { period: t + 1 });
            }
        }
        for (t, pair) in labels.windows(2).enumerate() {
            if !pair[0].can_transition_to(pair[1]) {
                return Err(StrataError::InvalidTransition {
                    period: t + 2,
                    from: pair[0],
                    to: pair[1],
                });
            }
        }
        Ok(StratumSequence { labels, monotone })
    }

    #[inline]
    pub fn labels(&self) -> &[Stratum] {
        &self.labels
    }

    #[inline]
    pub fn periods(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn monotone(&self) -> bool {
        self.monotone
    }

    /// Potential survival path under the given arm; non-increasing by
    /// construction of the transition rules.
    pub fn survival_path(&self, arm: Arm) -> Vec<bool> {
        self.labels.iter().map(|g| g.survives(arm)).collect()
    }

    /// Last period (1-based) at which the unit is alive under `arm`;
    /// zero when dead from the first period on.
    pub fn alive_horizon(&self, arm: Arm) -> usize {
        self.labels.iter().rposition(|g| g.survives(arm)).map_or(0, |i| i + 1)
    }

    /// True when the first `s` periods are all AS.
    pub fn always_survivor_through(&self, s: usize) -> bool {
        s <= self.labels.len() && self.labels[..s].iter().all(|&g| g == Stratum::As)
    }
}

impl fmt::Display for StratumSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, g) in self.labels.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

/// One observed cell: treatment arm plus the observed survival path.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObservedCell {
    w: Arm,
    survival: Vec<bool>,
}

impl ObservedCell {
    pub fn new(w: Arm, survival: Vec<bool>) -> Result<ObservedCell, StrataError> {
        if survival.is_empty() {
            return Err(StrataError::ZeroPeriods);
        }
        if survival.windows(2).any(|p| !p[0] && p[1]) {
            return Err(StrataError::NonAbsorbingSurvival);
        }
        Ok(ObservedCell { w, survival })
    }

    #[inline]
    pub fn arm(&self) -> Arm {
        self.w
    }

    #[inline]
    pub fn survival(&self) -> &[bool] {
        &self.survival
    }

    #[inline]
    pub fn periods(&self) -> usize {
        self.survival.len()
    }

    /// Last period (1-based) observed alive; zero if dead throughout.
    pub fn alive_horizon(&self) -> usize {
        self.survival.iter().rposition(|&s| s).map_or(0, |i| i + 1)
    }

    /// All `t + 1` distinct cells for one arm, ordered by decreasing
    /// survival (all-alive first).
    pub fn all_for_arm(w: Arm, periods: usize) -> Vec<ObservedCell> {
        (0..=periods)
            .rev()
            .map(|alive| {
                let survival = (0..periods).map(|t| t < alive).collect();
                ObservedCell { w, survival }
            })
            .collect()
    }
}

/// Enumerates every valid stratum sequence of length `periods`, in canonical
/// order (lexicographic over per-period labels, AS < CS < DS < NS). With
/// `monotone` set, DS is excluded.
pub fn enumerate_sequences(
    periods: usize,
    monotone: bool,
) -> Result<Vec<StratumSequence>, StrataError> {
    if periods == 0 {
        return Err(StrataError::ZeroPeriods);
    }
    let alphabet: &[Stratum] = if monotone { &MONOTONE_STRATA } else { &ALL_STRATA };
    let mut out = Vec::new();
    let mut prefix: Vec<Stratum> = Vec::with_capacity(periods);
    fn recurse(
        alphabet: &[Stratum],
        periods: usize,
        monotone: bool,
        prefix: &mut Vec<Stratum>,
        out: &mut Vec<StratumSequence>,
    ) {
        if prefix.len() == periods {
            out.push(StratumSequence { labels: prefix.clone(), monotone });
            return;
        }
        for &g in alphabet {
            if prefix.last().is_none_or(|&prev| prev.can_transition_to(g)) {
                prefix.push(g);
                recurse(alphabet, periods, monotone, prefix, out);
                prefix.pop();
            }
        }
    }
    recurse(alphabet, periods, monotone, &mut prefix, &mut out);
    Ok(out)
}

/// Sequences whose potential survival path under the cell's arm equals the
/// cell's observed path. Reproduces the observed-cell → strata table row for
/// row in both enumeration regimes.
pub fn compatible_strata(cell: &ObservedCell, monotone: bool) -> Vec<StratumSequence> {
    enumerate_sequences(cell.periods(), monotone)
        .expect("cell has at least one period")
        .into_iter()
        .filter(|seq| seq.survival_path(cell.arm()) == cell.survival)
        .collect()
}

/// Parses a dotted label string such as `AS.CS.NS`.
pub fn parse_sequence(s: &str, monotone: bool) -> Option<StratumSequence> {
    let labels: Option<Vec<Stratum>> = s.split('.').map(Stratum::parse).collect();
    StratumSequence::new(labels?, monotone).ok()
}
