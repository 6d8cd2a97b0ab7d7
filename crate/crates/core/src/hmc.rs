//! Hamiltonian Monte Carlo over a differentiable log density.
//!
//! Plain HMC with a jittered fixed leapfrog step count: momentum refresh
//! from a diagonal metric, leapfrog integration, Metropolis accept/reject.
//! The step size is tuned during warmup by Nesterov dual averaging toward a
//! target acceptance rate and then frozen; the diagonal metric is estimated
//! from the second half of warmup. Chains are independent and fully
//! reproducible from (seed, chain index), so runs are bit-identical for any
//! thread count.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::data::Dataset;
use crate::likelihood::{LikelihoodError, PosteriorTarget};
use crate::math;
use crate::model::{BlockLayout, ParamVector, PriorSpec, SlopeMode};
use crate::rng::{mix64, standard_normal, stream_rng};

/// Differentiable unnormalized log density; the sampler's target.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Log density at `theta`, gradient written into `grad`.
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;
}

impl LogDensity for PosteriorTarget {
    fn dim(&self) -> usize {
        PosteriorTarget::dim(self)
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.log_posterior_grad(theta, grad).expect("dimension checked at sampler start")
    }
}

/// Standard multivariate Gaussian swap-in target for sampler checks.
pub struct StandardGaussian {
    pub dim: usize,
}

impl LogDensity for StandardGaussian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for (g, &t) in grad.iter_mut().zip(theta) {
            *g = -t;
            lp -= 0.5 * t * t;
        }
        lp
    }
}

/// Leapfrog step count per iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LeapfrogSpec {
    Fixed(usize),
    /// Uniform integer jitter of `frac` around `base`, drawn per iteration.
    Jittered { base: usize, frac: f64 },
}

impl Default for LeapfrogSpec {
    fn default() -> Self {
        LeapfrogSpec::Jittered { base: 32, frac: 0.2 }
    }
}

impl LeapfrogSpec {
    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        match *self {
            LeapfrogSpec::Fixed(n) => n.max(1),
            LeapfrogSpec::Jittered { base, frac } => {
                let lo = (math::ceil(base as f64 * (1.0 - frac)) as usize).max(1);
                let hi = (math::floor(base as f64 * (1.0 + frac)) as usize).max(lo);
                rng.random_range(lo..=hi)
            }
        }
    }

    fn min_steps(&self) -> usize {
        match *self {
            LeapfrogSpec::Fixed(n) => n,
            LeapfrogSpec::Jittered { base, .. } => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HmcConfig {
    /// Total iterations per chain, warmup included.
    pub iterations: usize,
    /// Adaptation iterations discarded from the front of each chain.
    pub warmup: usize,
    pub chains: usize,
    pub leapfrog: LeapfrogSpec,
    /// Dual-averaging acceptance target.
    pub target_accept: f64,
    pub seed: u64,
    /// Estimate a diagonal metric from the second half of warmup.
    pub adapt_mass: bool,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            iterations: 2000,
            warmup: 1000,
            chains: 4,
            leapfrog: LeapfrogSpec::default(),
            target_accept: 0.8,
            seed: 0,
            adapt_mass: true,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.warmup >= self.iterations {
            return Err(SamplerError::InvalidConfig("warmup must be smaller than iterations"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(SamplerError::InvalidConfig("target_accept must lie in (0, 1)"));
        }
        if self.chains == 0 {
            return Err(SamplerError::InvalidConfig("at least one chain required"));
        }
        if self.leapfrog.min_steps() < 1 {
            return Err(SamplerError::InvalidConfig("leapfrog step count must be at least 1"));
        }
        Ok(())
    }

    #[inline]
    pub fn retained(&self) -> usize {
        self.iterations - self.warmup
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplerError {
    InvalidConfig(&'static str),
    /// The log density or its gradient was non-finite at the initial point.
    NonFiniteAtInit { chain: usize },
    Likelihood(LikelihoodError),
    /// A retained draw came out non-finite.
    NonFiniteDraw { chain: usize, iteration: usize },
}

impl fmt::Display for SamplerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerError::InvalidConfig(msg) => write!(f, "invalid sampler configuration: {msg}"),
            SamplerError::NonFiniteAtInit { chain } => {
                write!(f, "non-finite log density or gradient at initialization of chain {chain}")
            }
            SamplerError::Likelihood(e) => write!(f, "{e}"),
            SamplerError::NonFiniteDraw { chain, iteration } => {
                write!(f, "non-finite draw at chain {chain}, iteration {iteration}")
            }
        }
    }
}

impl core::error::Error for SamplerError {}

impl From<LikelihoodError> for SamplerError {
    fn from(e: LikelihoodError) -> Self {
        SamplerError::Likelihood(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SamplerWarning {
    /// Post-warmup divergence rate above 20 percent.
    HighDivergenceRate { chain: usize, rate: f64 },
}

impl fmt::Display for SamplerWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerWarning::HighDivergenceRate { chain, rate } => {
                write!(f, "chain {chain}: divergence rate {rate:.3} exceeds 0.2")
            }
        }
    }
}

/// Retained draws from all chains plus per-chain adaptation outcomes.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PosteriorDraws {
    layout: BlockLayout,
    chains: usize,
    retained: usize,
    dim: usize,
    /// Chain-major storage: `values[((c * retained) + i) * dim + j]`.
    values: Vec<f64>,
    accept_rates: Vec<f64>,
    step_sizes: Vec<f64>,
    divergences: Vec<usize>,
    warnings: Vec<SamplerWarning>,
}

impl PosteriorDraws {
    pub fn from_parts(
        layout: BlockLayout,
        chains: usize,
        retained: usize,
        values: Vec<f64>,
        accept_rates: Vec<f64>,
        step_sizes: Vec<f64>,
        divergences: Vec<usize>,
        warnings: Vec<SamplerWarning>,
    ) -> Result<PosteriorDraws, SamplerError> {
        let dim = layout.dim();
        if values.len() != chains * retained * dim {
            return Err(SamplerError::InvalidConfig("draw buffer has the wrong length"));
        }
        Ok(PosteriorDraws {
            layout,
            chains,
            retained,
            dim,
            values,
            accept_rates,
            step_sizes,
            divergences,
            warnings,
        })
    }

    #[inline]
    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    #[inline]
    pub fn chains(&self) -> usize {
        self.chains
    }

    /// Retained draws per chain.
    #[inline]
    pub fn retained(&self) -> usize {
        self.retained
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total retained draws across chains.
    #[inline]
    pub fn total_draws(&self) -> usize {
        self.chains * self.retained
    }

    pub fn draw(&self, chain: usize, iteration: usize) -> &[f64] {
        let start = ((chain * self.retained) + iteration) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// Draw by flat index in chain-major order.
    pub fn flat_draw(&self, index: usize) -> &[f64] {
        let start = index * self.dim;
        &self.values[start..start + self.dim]
    }

    /// One coordinate's trace in one chain.
    pub fn coordinate_chain(&self, chain: usize, coordinate: usize) -> Vec<f64> {
        (0..self.retained).map(|i| self.draw(chain, i)[coordinate]).collect()
    }

    pub fn accept_rates(&self) -> &[f64] {
        &self.accept_rates
    }

    pub fn step_sizes(&self) -> &[f64] {
        &self.step_sizes
    }

    pub fn divergences(&self) -> &[usize] {
        &self.divergences
    }

    pub fn warnings(&self) -> &[SamplerWarning] {
        &self.warnings
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Overdispersed start: each coordinate uniform in [-1, 1].
pub fn initialize(layout: &BlockLayout, seed: u64) -> ParamVector {
    const INIT_STREAM: u64 = 0x696e_6974; // "init"
    let mut rng = stream_rng(seed, INIT_STREAM);
    let values: Vec<f64> = (0..layout.dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    ParamVector::from_values(layout, values).expect("length matches by construction")
}

fn derive_chain_seed(seed: u64, chain: usize) -> u64 {
    mix64(seed ^ (chain as u64).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Kinetic energy for a diagonal metric with inverse mass `inv_mass`.
#[inline]
fn kinetic(momentum: &[f64], inv_mass: &[f64]) -> f64 {
    momentum.iter().zip(inv_mass).map(|(&r, &v)| 0.5 * r * r * v).sum()
}

/// One full leapfrog trajectory; returns the log density at the endpoint.
fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    theta: &mut [f64],
    momentum: &mut [f64],
    grad: &mut [f64],
    inv_mass: &[f64],
    step_size: f64,
    steps: usize,
) -> f64 {
    let mut lp = 0.0;
    for _ in 0..steps {
        for (r, &g) in momentum.iter_mut().zip(grad.iter()) {
            *r += 0.5 * step_size * g;
        }
        for ((t, &r), &v) in theta.iter_mut().zip(momentum.iter()).zip(inv_mass) {
            *t += step_size * v * r;
        }
        lp = target.log_density_grad(theta, grad);
        for (r, &g) in momentum.iter_mut().zip(grad.iter()) {
            *r += 0.5 * step_size * g;
        }
    }
    lp
}

/// Step-size search: double or halve until the one-step acceptance
/// probability crosses one half.
fn find_reasonable_step_size<T: LogDensity + ?Sized, R: Rng>(
    target: &T,
    theta: &[f64],
    lp: f64,
    grad: &[f64],
    inv_mass: &[f64],
    rng: &mut R,
) -> f64 {
    let dim = theta.len();
    let mut eps = 1.0;
    let mut momentum: Vec<f64> = (0..dim).collect::<Vec<_>>()
        .iter()
        .map(|_| 0.0)
        .collect();
    for (r, &v) in momentum.iter_mut().zip(inv_mass) {
        let sd = 1.0 / math::sqrt(v);
        *r = sd * standard_normal(rng);
    }
    let h0 = -lp + kinetic(&momentum, inv_mass);

    let log_alpha = |eps: f64| -> f64 {
        let mut th = theta.to_vec();
        let mut mo = momentum.clone();
        let mut gr = grad.to_vec();
        let lp1 = leapfrog(target, &mut th, &mut mo, &mut gr, inv_mass, eps, 1);
        let h1 = -lp1 + kinetic(&mo, inv_mass);
        if h1.is_finite() {
            h0 - h1
        } else {
            f64::NEG_INFINITY
        }
    };

    let la = log_alpha(eps);
    let dir: f64 = if la > -core::f64::consts::LN_2 { 1.0 } else { -1.0 };
    for _ in 0..60 {
        let la = log_alpha(eps);
        if dir > 0.0 && la <= -core::f64::consts::LN_2 {
            break;
        }
        if dir < 0.0 && la >= -core::f64::consts::LN_2 {
            break;
        }
        eps *= if dir > 0.0 { 2.0 } else { 0.5 };
        if !(1e-12..=1e6).contains(&eps) {
            break;
        }
    }
    eps
}

/// Dual-averaging state (Nesterov / Hoffman-Gelman, Stan constants).
struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: usize,
    target: f64,
}

const DA_GAMMA: f64 = 0.05;
const DA_T0: f64 = 10.0;
const DA_KAPPA: f64 = 0.75;
/// Divergence threshold on |H_prop - H_cur|.
const MAX_DELTA_H: f64 = 1000.0;

impl DualAveraging {
    fn new(eps0: f64, target: f64) -> DualAveraging {
        DualAveraging {
            mu: math::ln(10.0 * eps0),
            log_eps: math::ln(eps0),
            log_eps_bar: math::ln(eps0),
            h_bar: 0.0,
            m: 0,
            target,
        }
    }

    fn update(&mut self, alpha: f64) {
        self.m += 1;
        let m = self.m as f64;
        let w = 1.0 / (m + DA_T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - alpha);
        self.log_eps = self.mu - math::sqrt(m) / DA_GAMMA * self.h_bar;
        let eta = libm_powf_neg_kappa(m);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        math::exp(self.log_eps)
    }

    fn frozen(&self) -> f64 {
        math::exp(self.log_eps_bar)
    }
}

/// m^(-kappa) via exp/ln, avoiding a powf dependency.
fn libm_powf_neg_kappa(m: f64) -> f64 {
    math::exp(-DA_KAPPA * math::ln(m))
}

/// Streaming mean/variance accumulator.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Welford {
        Welford { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Regularized variance estimate (shrunk toward unity, as is standard
    /// for metric adaptation).
    fn regularized_variance(&self) -> Option<Vec<f64>> {
        if self.n < 10 {
            return None;
        }
        let n = self.n as f64;
        Some(
            self.m2
                .iter()
                .map(|&m2| {
                    let var = m2 / (n - 1.0);
                    (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                })
                .collect(),
        )
    }
}

struct ChainResult {
    draws: Vec<f64>,
    accept_rate: f64,
    step_size: f64,
    divergences: usize,
}

fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    layout: &BlockLayout,
    cfg: &HmcConfig,
    chain: usize,
) -> Result<ChainResult, SamplerError> {
    let dim = target.dim();
    let chain_seed = derive_chain_seed(cfg.seed, chain);
    let mut rng = stream_rng(chain_seed, 1);

    let mut theta = initialize(layout, chain_seed).into_values();
    let mut grad = vec![0.0; dim];
    let mut lp = target.log_density_grad(&theta, &mut grad);
    if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(SamplerError::NonFiniteAtInit { chain });
    }

    let mut inv_mass = vec![1.0; dim];
    let eps0 = find_reasonable_step_size(target, &theta, lp, &grad, &inv_mass, &mut rng);
    let mut da = DualAveraging::new(eps0, cfg.target_accept);
    let mut step_size = da.current();

    // Metric window: variance accumulated over [warmup/2, 0.9 * warmup),
    // applied at the window end with a step-size re-search.
    let mass_window = if cfg.adapt_mass && cfg.warmup >= 100 {
        Some((cfg.warmup / 2, cfg.warmup * 9 / 10))
    } else {
        None
    };
    let mut welford = Welford::new(dim);

    let retained = cfg.retained();
    let mut draws = vec![0.0; retained * dim];
    let mut accepted_post = 0usize;
    let mut divergences_post = 0usize;

    let mut prop_theta = vec![0.0; dim];
    let mut prop_grad = vec![0.0; dim];
    let mut momentum = vec![0.0; dim];

    for iter in 0..cfg.iterations {
        let steps = cfg.leapfrog.draw(&mut rng);
        for (r, &v) in momentum.iter_mut().zip(&inv_mass) {
            *r = standard_normal(&mut rng) / math::sqrt(v);
        }
        let h0 = -lp + kinetic(&momentum, &inv_mass);

        prop_theta.copy_from_slice(&theta);
        prop_grad.copy_from_slice(&grad);
        let mut prop_momentum = momentum.clone();
        let prop_lp = leapfrog(
            target,
            &mut prop_theta,
            &mut prop_momentum,
            &mut prop_grad,
            &inv_mass,
            step_size,
            steps,
        );
        let h1 = -prop_lp + kinetic(&prop_momentum, &inv_mass);
        let delta_h = h1 - h0;
        let divergent = !delta_h.is_finite() || math::abs(delta_h) > MAX_DELTA_H;
        let alpha = if divergent { 0.0 } else { math::exp((-delta_h).min(0.0)) };

        let accept = !divergent && rng.random_range(0.0..1.0) < alpha;
        if accept {
            theta.copy_from_slice(&prop_theta);
            grad.copy_from_slice(&prop_grad);
            lp = prop_lp;
        }

        if iter < cfg.warmup {
            da.update(alpha);
            step_size = da.current();
            if let Some((lo, hi)) = mass_window {
                if iter >= lo && iter < hi {
                    welford.push(&theta);
                }
                if iter + 1 == hi {
                    if let Some(var) = welford.regularized_variance() {
                        inv_mass = var;
                        let eps = find_reasonable_step_size(
                            target, &theta, lp, &grad, &inv_mass, &mut rng,
                        );
                        da = DualAveraging::new(eps, cfg.target_accept);
                        step_size = da.current();
                    }
                }
            }
            if iter + 1 == cfg.warmup {
                step_size = da.frozen();
            }
        } else {
            if accept {
                accepted_post += 1;
            }
            if divergent {
                divergences_post += 1;
            }
            let kept = iter - cfg.warmup;
            draws[kept * dim..(kept + 1) * dim].copy_from_slice(&theta);
        }
    }

    if let Some(bad) = draws.iter().position(|v| !v.is_finite()) {
        return Err(SamplerError::NonFiniteDraw { chain, iteration: bad / dim });
    }
    Ok(ChainResult {
        draws,
        accept_rate: accepted_post as f64 / retained as f64,
        step_size,
        divergences: divergences_post,
    })
}

/// Runs HMC on an arbitrary target with the given layout for naming.
pub fn run_hmc_target<T: LogDensity + ?Sized>(
    target: &T,
    layout: &BlockLayout,
    cfg: &HmcConfig,
) -> Result<PosteriorDraws, SamplerError> {
    cfg.validate()?;
    if layout.dim() != target.dim() {
        return Err(SamplerError::InvalidConfig("layout dimension does not match the target"));
    }

    let chain_ids: Vec<usize> = (0..cfg.chains).collect();
    #[cfg(feature = "parallel")]
    let results: Vec<Result<ChainResult, SamplerError>> = {
        use rayon::prelude::*;
        chain_ids.par_iter().map(|&c| run_chain(target, layout, cfg, c)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<ChainResult, SamplerError>> =
        chain_ids.iter().map(|&c| run_chain(target, layout, cfg, c)).collect();

    let retained = cfg.retained();
    let dim = layout.dim();
    let mut values = Vec::with_capacity(cfg.chains * retained * dim);
    let mut accept_rates = Vec::with_capacity(cfg.chains);
    let mut step_sizes = Vec::with_capacity(cfg.chains);
    let mut divergences = Vec::with_capacity(cfg.chains);
    let mut warnings = Vec::new();
    for (chain, result) in results.into_iter().enumerate() {
        let r = result?;
        let div_rate = r.divergences as f64 / retained as f64;
        if div_rate > 0.2 {
            warnings.push(SamplerWarning::HighDivergenceRate { chain, rate: div_rate });
        }
        values.extend_from_slice(&r.draws);
        accept_rates.push(r.accept_rate);
        step_sizes.push(r.step_size);
        divergences.push(r.divergences);
    }

    PosteriorDraws::from_parts(
        layout.clone(),
        cfg.chains,
        retained,
        values,
        accept_rates,
        step_sizes,
        divergences,
        warnings,
    )
}

/// Fits the marginalized posterior for a dataset (shared-slope layout
/// derived from the data).
pub fn run_hmc(
    data: &Dataset,
    prior: &PriorSpec,
    cfg: &HmcConfig,
) -> Result<PosteriorDraws, SamplerError> {
    let layout = BlockLayout::new(data.periods(), data.covariate_count(), SlopeMode::Shared);
    run_hmc_with_layout(data, layout, prior, cfg)
}

pub fn run_hmc_with_layout(
    data: &Dataset,
    layout: BlockLayout,
    prior: &PriorSpec,
    cfg: &HmcConfig,
) -> Result<PosteriorDraws, SamplerError> {
    let target = PosteriorTarget::new(data, layout, *prior)?;
    run_hmc_target(&target, &target.layout().clone(), cfg)
}
