//! Nonparametric empirical-Bayes prior estimation for high-dimensional
//! Bayesian linear models.
//!
//! The model is `y = X theta + eps` with `theta_j` i.i.d. from an unknown
//! prior supported on `[-M, M]`. The prior is estimated by (approximately)
//! minimizing the marginal negative log-likelihood over discrete priors on a
//! fixed grid. The main algorithm ([`ebflow`]) couples an unadjusted
//! Langevin chain for a smoothed reparametrization of the coefficients with
//! multiplicative Fisher-Rao updates of the prior weights, so the prior
//! evolves continuously while the chain mixes. Baseline estimators
//! ([`baselines`]): mean-field CAVI, Gibbs-within-EM, Langevin-within-EM.
//!
//! Crate layout:
//! - [`model`]: grid priors, linear models, the reparametrization context,
//!   and the posterior drift.
//! - [`datagen`]: simulation instances and dataset (de)serialization.
//! - [`seqnpmle`]: sequence-model NPMLE (marginal NLL, Fisher-Rao / EM
//!   updates, solver, convergence certificate).
//! - [`ebflow`]: the joint sampler with step schedules, spline smoothing,
//!   and preconditioning.
//! - [`baselines`]: the comparison estimators.
//! - [`inference`]: posterior means, prediction error, grid metrics.
//! - [`oracle`]: brute-force references used by the test suites.

pub mod baselines;
pub mod datagen;
pub mod ebflow;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod math;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod seqnpmle;
mod simplex;

pub use error::{Error, Result};
pub use model::{build_reparam, GridPrior, LinearModel, ReparamContext, TauRule};
