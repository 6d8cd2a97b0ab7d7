//! Convergence diagnostics: split-chain R-hat and rank-normalized bulk
//! effective sample size, following the Stan reference computations.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::hmc::PosteriorDraws;
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub enum DiagnosticsError {
    /// R-hat needs at least two chains.
    TooFewChains { chains: usize },
    /// Split diagnostics need a minimum number of retained draws.
    TooFewDraws { draws: usize, minimum: usize },
}

impl fmt::Display for DiagnosticsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiagnosticsError::TooFewChains { chains } => {
                write!(f, "split R-hat needs at least 2 chains, got {chains}")
            }
            DiagnosticsError::TooFewDraws { draws, minimum } => {
                write!(f, "diagnostics need at least {minimum} retained draws, got {draws}")
            }
        }
    }
}

impl core::error::Error for DiagnosticsError {}

/// Per-parameter diagnostics row.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParameterDiagnostics {
    pub name: String,
    /// Split potential scale reduction; `None` with a single chain.
    pub rhat: Option<f64>,
    /// Rank-normalized bulk effective sample size.
    pub ess: f64,
    /// Set when the trace is (numerically) constant.
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiagnosticsTable {
    pub parameters: Vec<ParameterDiagnostics>,
}

impl DiagnosticsTable {
    pub fn max_rhat(&self) -> Option<f64> {
        self.parameters.iter().filter_map(|p| p.rhat).fold(None, |acc, r| {
            Some(match acc {
                Some(a) if a >= r => a,
                _ => r,
            })
        })
    }

    pub fn min_ess(&self) -> Option<f64> {
        self.parameters.iter().map(|p| p.ess).fold(None, |acc, e| {
            Some(match acc {
                Some(a) if a <= e => a,
                _ => e,
            })
        })
    }
}

/// Splits each chain in half (dropping the middle draw when odd).
fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

const CONSTANT_EPS: f64 = 1e-300;

/// Potential scale reduction over the given (already split) chains.
fn psr(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| math::mean(c)).collect();
    let vars: Vec<f64> = chains.iter().map(|c| math::sample_variance(c)).collect();
    let b = n * math::sample_variance(&means);
    let w = math::mean(&vars);
    if !(w > CONSTANT_EPS) {
        return f64::NAN;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    let _ = m;
    math::sqrt(var_plus / w)
}

/// Split R-hat for one parameter across chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    psr(&split_chains(chains))
}

/// Average rank over all chains mapped through the normal quantile function
/// (fractional offsets as in rank normalization: (r - 3/8) / (S + 1/4)).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let lens: Vec<usize> = chains.iter().map(|c| c.len()).collect();
    let total: usize = lens.iter().sum();
    let mut indexed: Vec<(f64, usize)> = Vec::with_capacity(total);
    let mut flat_index = 0usize;
    for c in chains {
        for &v in c {
            indexed.push((v, flat_index));
            flat_index += 1;
        }
    }
    indexed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = alloc::vec![0.0f64; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && indexed[j + 1].0 == indexed[i].0 {
            j += 1;
        }
        // Average rank for ties, 1-based.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for item in &indexed[i..=j] {
            ranks[item.1] = avg;
        }
        i = j + 1;
    }
    let s = total as f64;
    let mut out = Vec::with_capacity(chains.len());
    let mut k = 0usize;
    for &len in &lens {
        let mut z = Vec::with_capacity(len);
        for _ in 0..len {
            z.push(math::inverse_normal_cdf((ranks[k] - 0.375) / (s + 0.25)));
            k += 1;
        }
        out.push(z);
    }
    out
}

/// Autocovariance of one chain at the given lag (biased, n denominator).
fn autocovariance(chain: &[f64], mean: f64, lag: usize) -> f64 {
    let n = chain.len();
    let mut acc = 0.0;
    for i in 0..n - lag {
        acc += (chain[i] - mean) * (chain[i + lag] - mean);
    }
    acc / n as f64
}

/// Effective sample size over (already split, already transformed) chains,
/// using Geyer's initial monotone positive sequence.
fn ess_core(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| math::mean(c)).collect();
    let vars: Vec<f64> = chains.iter().map(|c| math::sample_variance(c)).collect();
    let w = math::mean(&vars);
    let b_over_n = if m > 1 { math::sample_variance(&means) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if !(var_plus > CONSTANT_EPS) {
        return f64::NAN;
    }

    // rho_t = 1 - (W - mean autocovariance at lag t) / var_plus, summed in
    // Geyer pairs while positive and monotone.
    let mut rho_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 1usize;
    while lag + 1 < n {
        let mut acov_t = 0.0;
        let mut acov_t1 = 0.0;
        for (c, &mu) in chains.iter().zip(&means) {
            acov_t += autocovariance(c, mu, lag);
            acov_t1 += autocovariance(c, mu, lag + 1);
        }
        acov_t /= m as f64;
        acov_t1 /= m as f64;
        let rho_t = 1.0 - (w - acov_t) / var_plus;
        let rho_t1 = 1.0 - (w - acov_t1) / var_plus;
        let mut pair = rho_t + rho_t1;
        if pair < 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        prev_pair = pair;
        rho_sum += pair;
        lag += 2;
    }
    let tau = 1.0 + 2.0 * rho_sum;
    let ess = (m * n) as f64 / tau.max(1.0 / (m * n) as f64);
    ess.min((m * n) as f64)
}

/// Rank-normalized bulk ESS across chains.
pub fn ess_rank_normalized(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    let normalized = rank_normalize(&split);
    ess_core(&normalized)
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().all(|c| c.iter().all(|&v| v == first))
}

/// Per-parameter split R-hat and rank-normalized ESS for a set of draws.
///
/// With a single chain R-hat is unavailable (`None`); ESS is still computed
/// from the split halves. A constant trace reports ESS = 1 with the
/// `constant` warning flag set.
pub fn diagnostics(draws: &PosteriorDraws) -> Result<DiagnosticsTable, DiagnosticsError> {
    let chains = draws.chains();
    if draws.retained() < 4 {
        return Err(DiagnosticsError::TooFewDraws { draws: draws.retained(), minimum: 4 });
    }
    let multi_chain = chains >= 2;
    if multi_chain && draws.retained() < 100 {
        // R-hat on very short chains is noise; still compute ESS below.
    }
    let mut parameters = Vec::with_capacity(draws.dim());
    for coord in 0..draws.dim() {
        let per_chain: Vec<Vec<f64>> =
            (0..chains).map(|c| draws.coordinate_chain(c, coord)).collect();
        let name = draws.layout().names()[coord].clone();
        if is_constant(&per_chain) {
            parameters.push(ParameterDiagnostics {
                name,
                rhat: multi_chain.then_some(f64::NAN),
                ess: 1.0,
                constant: true,
            });
            continue;
        }
        let rhat = multi_chain.then(|| split_rhat(&per_chain));
        let ess = ess_rank_normalized(&per_chain);
        let (ess, constant) = if ess.is_nan() { (1.0, true) } else { (ess, false) };
        parameters.push(ParameterDiagnostics { name, rhat, ess, constant });
    }
    Ok(DiagnosticsTable { parameters })
}
