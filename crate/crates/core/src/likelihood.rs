//! Observed-data log likelihood with latent stratum sequences marginalized
//! out, the joint log posterior, and its exact gradient.
//!
//! Each unit's likelihood is a finite mixture over the stratum sequences
//! compatible with its observed (arm, survival) cell: the sequence
//! probability times the observed-arm outcome factors for the periods the
//! unit is alive. Unobserved-arm outcomes never enter (they are
//! conditionally independent of the observed ones). All mixture sums use
//! log-sum-exp, and responsibilities are formed by subtracting the log
//! mixture total.
//!
//! The gradient is analytic: mixture responsibilities weight per-sequence
//! multinomial-logit and logistic score contributions. For speed the dataset
//! is compiled once into flat per-unit plans holding parameter offsets, so a
//! gradient evaluation is a tight loop over precomputed indices.
//!
//! Reductions over units run over fixed 256-unit chunks combined in chunk
//! order, so results are bit-identical for any thread count (with or without
//! the `parallel` feature).

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::data::{Dataset, FirmRecord};
use crate::math;
use crate::model::{
    add_grad_log_prior, log_prior, BlockLayout, ModelError, PriorSpec, TransitionBlock,
};
use crate::strata::{compatible_strata, enumerate_sequences, Stratum, StratumSequence};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Units per reduction chunk. Fixed so that the reduction tree (and thus
/// floating-point association) never depends on the thread count.
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub enum LikelihoodError {
    Model(ModelError),
    /// Dataset shape does not match the layout (covariates or periods).
    LayoutMismatch { layout_periods: usize, layout_covariates: usize, data_periods: usize, data_covariates: usize },
}

impl fmt::Display for LikelihoodError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LikelihoodError::Model(e) => write!(f, "{e}"),
            LikelihoodError::LayoutMismatch {
                layout_periods,
                layout_covariates,
                data_periods,
                data_covariates,
            } => write!(
                f,
                "layout is T={layout_periods}, K={layout_covariates} but data is T={data_periods}, K={data_covariates}"
            ),
        }
    }
}

impl core::error::Error for LikelihoodError {}

impl From<ModelError> for LikelihoodError {
    fn from(e: ModelError) -> Self {
        LikelihoodError::Model(e)
    }
}

/// Per-unit likelihood inputs: the record, its precomputed compatible
/// stratum sequences (monotone regime), and the last period alive under the
/// observed arm.
#[derive(Debug, Clone)]
pub struct UnitLikelihoodContext {
    pub record: FirmRecord,
    pub compatible: Vec<StratumSequence>,
    pub alive_horizon: usize,
}

impl UnitLikelihoodContext {
    pub fn new(record: FirmRecord) -> UnitLikelihoodContext {
        let compatible = compatible_strata(&record.observed_cell(), true);
        let alive_horizon = record.alive_horizon();
        UnitLikelihoodContext { record, compatible, alive_horizon }
    }
}

/// Transition block referenced by a unit: parameter offset and the number of
/// parameterized destinations (the NS baseline is implicit).
#[derive(Debug, Clone, Copy)]
struct TransRef {
    offset: u32,
    n_dest: u8,
}

/// One observed-arm outcome factor: offsets plus the observed value and lag.
#[derive(Debug, Clone, Copy)]
struct OutRef {
    icpt: u32,
    /// `u32::MAX` when the period has no lag term.
    lag: u32,
    /// Offset of this factor's covariate slopes; `u32::MAX` in shared mode.
    slopes: u32,
    y: bool,
    /// 0 / 1 observed lag value; 2 when absent (t = 1).
    y_prev: u8,
}

/// One compatible sequence: indices into the unit's transition references
/// (with the destination slot) and outcome references.
#[derive(Debug, Clone)]
struct SeqPlan {
    /// (transition ref index, destination index). The destination index is
    /// `n_dest` for the NS baseline.
    trans: Vec<(u16, u8)>,
    outs: Vec<u16>,
    /// Position of this sequence in the canonical monotone enumeration.
    global_index: u16,
}

#[derive(Debug, Clone)]
struct UnitPlan {
    x: Vec<f64>,
    trans_refs: Vec<TransRef>,
    out_refs: Vec<OutRef>,
    seqs: Vec<SeqPlan>,
}

/// Reusable per-chunk evaluation buffers.
struct EvalScratch {
    /// Per transition ref: log-probs, stride 3 (param dests then NS).
    trans_logp: Vec<f64>,
    /// Per transition ref: probabilities of param dests, stride 2.
    trans_p: Vec<f64>,
    out_logf: Vec<f64>,
    out_resid: Vec<f64>,
    seq_ll: Vec<f64>,
    resp: Vec<f64>,
    block_w_tot: Vec<f64>,
    block_w_dest: Vec<f64>,
    out_w: Vec<f64>,
}

impl EvalScratch {
    fn new() -> EvalScratch {
        EvalScratch {
            trans_logp: Vec::new(),
            trans_p: Vec::new(),
            out_logf: Vec::new(),
            out_resid: Vec::new(),
            seq_ll: Vec::new(),
            resp: Vec::new(),
            block_w_tot: Vec::new(),
            block_w_dest: Vec::new(),
            out_w: Vec::new(),
        }
    }
}

/// A dataset compiled against a layout and prior: the sampler's target
/// density. Evaluation is deterministic for a fixed input regardless of the
/// thread count.
pub struct PosteriorTarget {
    layout: BlockLayout,
    prior: PriorSpec,
    records: Vec<FirmRecord>,
    units: Vec<UnitPlan>,
    compatible: Vec<Vec<StratumSequence>>,
    shared_slopes: Option<u32>,
    k: usize,
}

impl PosteriorTarget {
    pub fn new(
        data: &Dataset,
        layout: BlockLayout,
        prior: PriorSpec,
    ) -> Result<PosteriorTarget, LikelihoodError> {
        prior.validate()?;
        if !data.is_empty()
            && (data.periods() != layout.periods() || data.covariate_count() != layout.covariates())
        {
            return Err(LikelihoodError::LayoutMismatch {
                layout_periods: layout.periods(),
                layout_covariates: layout.covariates(),
                data_periods: data.periods(),
                data_covariates: data.covariate_count(),
            });
        }
        let canonical = enumerate_sequences(layout.periods(), true).map_err(|_| {
            LikelihoodError::Model(ModelError::PeriodOutOfRange { period: layout.periods() })
        })?;
        let mut units = Vec::with_capacity(data.len());
        let mut compatible = Vec::with_capacity(data.len());
        for record in data.records() {
            let ctx = UnitLikelihoodContext::new(record.clone());
            units.push(compile_unit(&layout, &ctx, &canonical)?);
            compatible.push(ctx.compatible);
        }
        let shared_slopes = layout.shared_slope_offset().map(|o| o as u32);
        let k = layout.covariates();
        let records = data.records().to_vec();
        Ok(PosteriorTarget { layout, prior, records, units, compatible, shared_slopes, k })
    }

    #[inline]
    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    #[inline]
    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    #[inline]
    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    /// Compatible sequences of unit `i`, aligned with
    /// [`PosteriorTarget::responsibilities`].
    pub fn compatible(&self, unit: usize) -> &[StratumSequence] {
        &self.compatible[unit]
    }

    /// The record unit `i` was compiled from.
    pub fn record(&self, unit: usize) -> &FirmRecord {
        &self.records[unit]
    }

    /// Canonical enumeration index of each compatible sequence of unit `i`.
    pub fn compatible_global_indices(&self, unit: usize) -> Vec<usize> {
        self.units[unit].seqs.iter().map(|s| s.global_index as usize).collect()
    }

    /// Log posterior (prior plus marginalized likelihood).
    pub fn log_posterior(&self, theta: &[f64]) -> Result<f64, LikelihoodError> {
        self.layout.check_dim(theta)?;
        let lp = log_prior(&self.layout, theta, &self.prior)?;
        let chunks = self.chunk_map(theta, false);
        let mut total = lp;
        for (ll, _) in chunks {
            total += ll;
        }
        Ok(total)
    }

    /// Log posterior and its gradient written into `grad`.
    pub fn log_posterior_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64, LikelihoodError> {
        self.layout.check_dim(theta)?;
        self.layout.check_dim(grad)?;
        grad.fill(0.0);
        add_grad_log_prior(&self.layout, theta, &self.prior, grad)?;
        let lp = log_prior(&self.layout, theta, &self.prior)?;
        let chunks = self.chunk_map(theta, true);
        let mut total = lp;
        for (ll, g) in chunks {
            total += ll;
            if let Some(g) = g {
                for (gi, ci) in grad.iter_mut().zip(&g) {
                    *gi += ci;
                }
            }
        }
        Ok(total)
    }

    /// Log likelihood contribution of unit `i`.
    pub fn unit_log_likelihood(&self, unit: usize, theta: &[f64]) -> Result<f64, LikelihoodError> {
        self.layout.check_dim(theta)?;
        let mut scratch = EvalScratch::new();
        Ok(eval_unit(&self.units[unit], theta, self.shared_slopes, self.k, &mut scratch, None))
    }

    /// Posterior membership probabilities of unit `i` over its compatible
    /// sequences (normalized responsibilities).
    pub fn responsibilities(&self, unit: usize, theta: &[f64]) -> Result<Vec<f64>, LikelihoodError> {
        self.layout.check_dim(theta)?;
        let plan = &self.units[unit];
        let mut scratch = EvalScratch::new();
        let ll = eval_unit(plan, theta, self.shared_slopes, self.k, &mut scratch, None);
        Ok(scratch.seq_ll.iter().map(|&l| math::exp(l - ll)).collect())
    }

    fn chunk_map(&self, theta: &[f64], with_grad: bool) -> Vec<(f64, Option<Vec<f64>>)> {
        let n_chunks = self.units.len().div_ceil(CHUNK);
        let eval_chunk = |c: usize| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(self.units.len());
            let mut scratch = EvalScratch::new();
            let mut grad = with_grad.then(|| vec![0.0; self.layout.dim()]);
            let mut ll = 0.0;
            for plan in &self.units[lo..hi] {
                ll += eval_unit(plan, theta, self.shared_slopes, self.k, &mut scratch, grad.as_deref_mut());
            }
            (ll, grad)
        };
        #[cfg(feature = "parallel")]
        {
            (0..n_chunks).into_par_iter().map(eval_chunk).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n_chunks).map(eval_chunk).collect()
        }
    }
}

fn compile_unit(
    layout: &BlockLayout,
    ctx: &UnitLikelihoodContext,
    canonical: &[StratumSequence],
) -> Result<UnitPlan, LikelihoodError> {
    let record = &ctx.record;
    let k = layout.covariates();
    let mut trans_refs: Vec<TransRef> = Vec::new();
    let mut trans_keys: Vec<u32> = Vec::new();
    let mut out_refs: Vec<OutRef> = Vec::new();
    let mut seqs = Vec::with_capacity(ctx.compatible.len());

    for seq in &ctx.compatible {
        let global_index = canonical
            .iter()
            .position(|s| s.labels() == seq.labels())
            .ok_or(LikelihoodError::Model(ModelError::InvalidHistory))? as u16;
        let mut trans = Vec::new();
        for t in 0..seq.periods() {
            let history = &seq.labels()[..t];
            if history.last() == Some(&Stratum::Ns) {
                continue; // absorbed: probability one, no parameters
            }
            let block = layout
                .transition_block(history)
                .ok_or(LikelihoodError::Model(ModelError::InvalidHistory))?;
            let ref_idx = match trans_keys.iter().position(|&o| o == block.offset as u32) {
                Some(i) => i,
                None => {
                    trans_keys.push(block.offset as u32);
                    trans_refs.push(TransRef {
                        offset: block.offset as u32,
                        n_dest: block.destinations.len() as u8,
                    });
                    trans_refs.len() - 1
                }
            };
            let dest = seq.labels()[t];
            let dest_idx = block
                .destinations
                .iter()
                .position(|&d| d == dest)
                .unwrap_or(block.destinations.len()) as u8;
            trans.push((ref_idx as u16, dest_idx));
        }

        let mut outs = Vec::new();
        for t in 1..=ctx.alive_horizon {
            let prefix = &seq.labels()[..t];
            let block = layout
                .outcome_block(record.w, prefix)
                .ok_or(LikelihoodError::Model(ModelError::UndefinedOutcome { period: t, arm: record.w }))?;
            let y = record.y[t - 1]
                .ok_or(LikelihoodError::Model(ModelError::UndefinedOutcome { period: t, arm: record.w }))?;
            let y_prev: u8 = if t >= 2 {
                u8::from(record.y[t - 2].ok_or(LikelihoodError::Model(
                    ModelError::UndefinedOutcome { period: t - 1, arm: record.w },
                ))?)
            } else {
                2
            };
            let candidate = OutRef {
                icpt: block.offset as u32,
                lag: block.lag_offset().map_or(u32::MAX, |o| o as u32),
                slopes: block.slopes_offset().map_or(u32::MAX, |o| o as u32),
                y,
                y_prev,
            };
            let ref_idx = match out_refs
                .iter()
                .position(|r| r.icpt == candidate.icpt && r.y == candidate.y && r.y_prev == candidate.y_prev)
            {
                Some(i) => i,
                None => {
                    out_refs.push(candidate);
                    out_refs.len() - 1
                }
            };
            outs.push(ref_idx as u16);
        }
        seqs.push(SeqPlan { trans, outs, global_index });
    }

    let _ = k;
    Ok(UnitPlan { x: record.x.clone(), trans_refs, out_refs, seqs })
}

/// Evaluates one unit's log likelihood; when `grad` is given, adds the
/// unit's score contribution into it. The per-sequence log terms remain in
/// `scratch.seq_ll`, and responsibilities in `scratch.resp` when `grad` is
/// requested.
fn eval_unit(
    plan: &UnitPlan,
    theta: &[f64],
    shared_slopes: Option<u32>,
    k: usize,
    scratch: &mut EvalScratch,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let x = &plan.x;
    let with_grad = grad.is_some();

    // Shared covariate contribution, identical in every outcome factor.
    let shared_dot = match shared_slopes {
        Some(off) => {
            let off = off as usize;
            let mut acc = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                acc += theta[off + j] * xj;
            }
            acc
        }
        None => 0.0,
    };

    // Transition blocks: log-probs for every destination (params then NS).
    scratch.trans_logp.clear();
    scratch.trans_logp.resize(plan.trans_refs.len() * 3, 0.0);
    scratch.trans_p.clear();
    scratch.trans_p.resize(plan.trans_refs.len() * 2, 0.0);
    for (b, tr) in plan.trans_refs.iter().enumerate() {
        let stride = TransitionBlock::stride(k);
        let n = tr.n_dest as usize;
        let mut logits = [0.0f64; 3];
        let mut max = 0.0f64; // NS logit
        for d in 0..n {
            let off = tr.offset as usize + d * stride;
            let mut eta = theta[off];
            for (j, &xj) in x.iter().enumerate() {
                eta += theta[off + 1 + j] * xj;
            }
            logits[d] = eta;
            if eta > max {
                max = eta;
            }
        }
        let mut sum = math::exp(0.0 - max);
        for d in 0..n {
            sum += math::exp(logits[d] - max);
        }
        let lse = max + math::ln(sum);
        for d in 0..n {
            scratch.trans_logp[b * 3 + d] = logits[d] - lse;
            if with_grad {
                scratch.trans_p[b * 2 + d] = math::exp(logits[d] - lse);
            }
        }
        scratch.trans_logp[b * 3 + n] = -lse;
    }

    // Outcome factors.
    scratch.out_logf.clear();
    scratch.out_logf.resize(plan.out_refs.len(), 0.0);
    scratch.out_resid.clear();
    scratch.out_resid.resize(plan.out_refs.len(), 0.0);
    for (i, or) in plan.out_refs.iter().enumerate() {
        let mut eta = theta[or.icpt as usize] + shared_dot;
        if or.lag != u32::MAX && or.y_prev == 1 {
            eta += theta[or.lag as usize];
        }
        if or.slopes != u32::MAX {
            let off = or.slopes as usize;
            for (j, &xj) in x.iter().enumerate() {
                eta += theta[off + j] * xj;
            }
        }
        scratch.out_logf[i] = if or.y { math::log_expit(eta) } else { math::log_expit(-eta) };
        if with_grad {
            scratch.out_resid[i] = f64::from(or.y) - math::expit(eta);
        }
    }

    // Per-sequence mixture terms.
    scratch.seq_ll.clear();
    for seq in &plan.seqs {
        let mut ll = 0.0;
        for &(b, d) in &seq.trans {
            ll += scratch.trans_logp[b as usize * 3 + d as usize];
        }
        for &o in &seq.outs {
            ll += scratch.out_logf[o as usize];
        }
        scratch.seq_ll.push(ll);
    }
    let unit_ll = math::log_sum_exp(&scratch.seq_ll);

    let Some(grad) = grad.as_deref_mut() else {
        return unit_ll;
    };

    // Responsibilities, formed by subtracting the log mixture total.
    scratch.resp.clear();
    for &l in &scratch.seq_ll {
        scratch.resp.push(math::exp(l - unit_ll));
    }

    // Aggregate responsibility weights per transition block/destination and
    // per outcome factor, then push score contributions once per block.
    scratch.block_w_tot.clear();
    scratch.block_w_tot.resize(plan.trans_refs.len(), 0.0);
    scratch.block_w_dest.clear();
    scratch.block_w_dest.resize(plan.trans_refs.len() * 2, 0.0);
    scratch.out_w.clear();
    scratch.out_w.resize(plan.out_refs.len(), 0.0);
    for (seq, &r) in plan.seqs.iter().zip(&scratch.resp) {
        for &(b, d) in &seq.trans {
            scratch.block_w_tot[b as usize] += r;
            if (d as usize) < 2 && d < plan.trans_refs[b as usize].n_dest {
                scratch.block_w_dest[b as usize * 2 + d as usize] += r;
            }
        }
        for &o in &seq.outs {
            scratch.out_w[o as usize] += r;
        }
    }

    let stride = TransitionBlock::stride(k);
    for (b, tr) in plan.trans_refs.iter().enumerate() {
        let w_tot = scratch.block_w_tot[b];
        for d in 0..tr.n_dest as usize {
            let coef = scratch.block_w_dest[b * 2 + d] - scratch.trans_p[b * 2 + d] * w_tot;
            if coef == 0.0 {
                continue;
            }
            let off = tr.offset as usize + d * stride;
            grad[off] += coef;
            for (j, &xj) in x.iter().enumerate() {
                grad[off + 1 + j] += coef * xj;
            }
        }
    }

    let mut shared_coef = 0.0;
    for (i, or) in plan.out_refs.iter().enumerate() {
        let coef = scratch.out_w[i] * scratch.out_resid[i];
        if coef == 0.0 {
            continue;
        }
        grad[or.icpt as usize] += coef;
        if or.lag != u32::MAX && or.y_prev == 1 {
            grad[or.lag as usize] += coef;
        }
        if or.slopes != u32::MAX {
            let off = or.slopes as usize;
            for (j, &xj) in x.iter().enumerate() {
                grad[off + j] += coef * xj;
            }
        } else {
            shared_coef += coef;
        }
    }
    if let Some(off) = shared_slopes {
        let off = off as usize;
        for (j, &xj) in x.iter().enumerate() {
            grad[off + j] += shared_coef * xj;
        }
    }

    unit_ll
}

/// Log likelihood of a single unit (one-shot compilation; use
/// [`PosteriorTarget`] for repeated evaluation).
pub fn unit_log_likelihood(
    layout: &BlockLayout,
    theta: &[f64],
    ctx: &UnitLikelihoodContext,
) -> Result<f64, LikelihoodError> {
    layout.check_dim(theta)?;
    let canonical = enumerate_sequences(layout.periods(), true)
        .map_err(|_| LikelihoodError::Model(ModelError::PeriodOutOfRange { period: 0 }))?;
    let plan = compile_unit(layout, ctx, &canonical)?;
    let mut scratch = EvalScratch::new();
    let shared = layout.shared_slope_offset().map(|o| o as u32);
    Ok(eval_unit(&plan, theta, shared, layout.covariates(), &mut scratch, None))
}

/// Posterior membership probabilities over a record's compatible sequences.
pub fn membership_responsibilities(
    layout: &BlockLayout,
    theta: &[f64],
    record: &FirmRecord,
) -> Result<Vec<(StratumSequence, f64)>, LikelihoodError> {
    layout.check_dim(theta)?;
    let ctx = UnitLikelihoodContext::new(record.clone());
    let canonical = enumerate_sequences(layout.periods(), true)
        .map_err(|_| LikelihoodError::Model(ModelError::PeriodOutOfRange { period: 0 }))?;
    let plan = compile_unit(layout, &ctx, &canonical)?;
    let mut scratch = EvalScratch::new();
    let shared = layout.shared_slope_offset().map(|o| o as u32);
    let ll = eval_unit(&plan, theta, shared, layout.covariates(), &mut scratch, None);
    Ok(ctx
        .compatible
        .into_iter()
        .zip(scratch.seq_ll.iter().map(|&l| math::exp(l - ll)))
        .collect())
}

/// Joint log posterior for a dataset (one-shot; builds the target
/// internally).
pub fn log_posterior(
    data: &Dataset,
    layout: &BlockLayout,
    theta: &[f64],
    prior: &PriorSpec,
) -> Result<f64, LikelihoodError> {
    PosteriorTarget::new(data, layout.clone(), *prior)?.log_posterior(theta)
}

/// Exact gradient of the log posterior (one-shot).
pub fn grad_log_posterior(
    data: &Dataset,
    layout: &BlockLayout,
    theta: &[f64],
    prior: &PriorSpec,
) -> Result<Vec<f64>, LikelihoodError> {
    let target = PosteriorTarget::new(data, layout.clone(), *prior)?;
    let mut grad = vec![0.0; layout.dim()];
    target.log_posterior_grad(theta, &mut grad)?;
    Ok(grad)
}
