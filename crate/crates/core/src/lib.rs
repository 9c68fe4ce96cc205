//! Robust inference for one-shot device testing under two competing
//! exponential failure causes.
//!
//! Devices in test condition `i` are inspected once at time `IT_i` under a
//! stress level `x_i`. Each device is found either working, failed from
//! cause 1, or failed from cause 2. Cause `r` has exponential lifetime with
//! rate `λ_r = θ_r0 · exp(θ_r1 · x)`.
//!
//! The crate estimates `θ = (θ10, θ11, θ20, θ21)` by minimizing a weighted
//! density power divergence (DPD) between observed cell proportions and model
//! cell probabilities. The tuning parameter `β ≥ 0` trades efficiency for
//! robustness; `β = 0` is the maximum likelihood estimator.
//!
//! - [`model`]: cell probabilities and their analytic gradients
//! - [`divergence`]: weighted Kullback-Leibler and DPD objectives
//! - [`estimation`]: the minimizer and its sandwich covariance
//! - [`inference`]: Wald-type tests, power and sample size
//! - [`tuning`]: data-driven choice of `β`
//! - [`montecarlo`]: seeded contamination studies
//!
//! ```
//! use oneshot_dpd::{fixtures, estimation::{fit, FitConfig}, divergence::Beta};
//!
//! let (plan, counts) = fixtures::bdc();
//! let mle = fit(&plan, &counts, &FitConfig::new(Beta::MLE)).unwrap();
//! assert!(mle.converged);
//! assert!((mle.theta_hat.theta11 - 1.319).abs() < 1e-3);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod divergence;
pub mod error;
pub mod estimation;
pub mod fixtures;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod montecarlo;
mod optim;
pub mod tuning;

pub use divergence::{Beta, CountsRow, CountsTable};
pub use error::{Error, Result};
pub use estimation::{fit, FitConfig, FitResult};
pub use model::{CellProbs, TestCondition, TestPlan, ThetaParams};
