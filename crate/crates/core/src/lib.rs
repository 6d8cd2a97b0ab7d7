//! Longitudinal principal stratification for outcomes truncated by death.
//!
//! Units (firms, patients, ...) are followed over `T` post-treatment periods
//! and may die at any of them; the endpoint is defined only while a unit is
//! alive. Cross-classifying units by their joint potential survival under
//! treatment and control in every period yields *longitudinal principal
//! strata*; causal contrasts on the endpoint are well defined only inside the
//! always-survivor strata (survivor average causal effects, SACEs).
//!
//! This crate carries the full algorithmic pipeline:
//!
//! * [`strata`] — enumeration of longitudinal strata, monotonicity filtering,
//!   and the observed-cell → compatible-strata map,
//! * [`data`] — validated panel datasets and descriptive summaries,
//! * [`model`] — parameter layout, priors, and the chained
//!   multinomial/logistic submodels,
//! * [`likelihood`] — the observed-data log posterior with latent strata
//!   marginalized out, and its exact gradient,
//! * [`hmc`] — Hamiltonian Monte Carlo with dual-averaging step-size
//!   adaptation and a diagonal metric,
//! * [`diagnostics`] — split R-hat and rank-normalized effective sample size,
//! * [`estimands`] — stratum membership posteriors and SACE estimation by
//!   finite-sample imputation or super-population weighting,
//! * [`simulation`] — synthetic data generation and brute-force oracles,
//! * [`ppc`] — posterior predictive checks on replicated datasets.
//!
//! The crate is `no_std`-compatible (with `alloc`); file formats and the
//! command-line interface live in the companion `pstrat-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("pstrat-core requires either the `std` or the `libm` feature");

pub mod data;
pub mod diagnostics;
pub mod estimands;
pub mod hmc;
pub mod likelihood;
pub mod math;
pub mod model;
pub mod ppc;
pub mod rng;
pub mod simulation;
pub mod strata;

pub use data::{Dataset, FirmRecord};
pub use model::{BlockLayout, ParamVector, PriorSpec};
pub use strata::{ObservedCell, Stratum, StratumSequence};
