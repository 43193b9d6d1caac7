//! Semi-supervised estimation of the noisy mixture-of-experts model.
//!
//! A mixture-of-experts predictor combines `K` linear regression "experts"
//! through a covariate-dependent "gate". In the noisy variant implemented
//! here, the latent cluster that shapes the covariate distribution and the
//! latent label that selects the expert are allowed to disagree; a
//! column-stochastic transition matrix connects the two.
//!
//! Fitting proceeds in stages:
//!
//! 1. [`gmm`] fits a Gaussian mixture to (mostly unlabeled) covariates and
//!    exposes posterior cluster probabilities and hard assignments.
//! 2. [`lts`] fits each expert on the labeled points assigned to its cluster
//!    using least trimmed squares, so that points whose labels were generated
//!    by a different expert are trimmed away, and estimates the error scale
//!    from the retained residuals.
//! 3. [`transition`] estimates the cluster-to-label transition matrix by
//!    exponentiated-gradient minimization of the negative log-likelihood over
//!    the product of probability simplices.
//! 4. [`moe`] composes the stages into a deployable predictor.
//!
//! [`baselines`] provides the comparison estimators (per-cluster OLS without
//! trimming, and fully supervised mixtures of experts with linear or
//! quadratic softmax gates fit by EM), and [`simbench`] provides the
//! synthetic-data generator, evaluation metrics, and a seeded Monte-Carlo
//! benchmark runner.

pub mod baselines;
pub mod error;
pub mod gmm;
mod kmeans;
pub mod linalg;
pub mod lts;
pub mod model_io;
pub mod moe;
pub mod rng;
pub mod simbench;
mod stats;
pub mod transition;

pub use error::{Error, Result};
