//! Derivative-free approximate Bayesian sampling for inverse problems.
//!
//! The crate provides the ensemble Kalman sampler and its relatives
//! (deterministic and noisy ensemble Kalman inversion, gradient-based
//! covariance-preconditioned Langevin particles), random-walk and pCN
//! Metropolis baselines, three forward models, and the closed-form Gaussian
//! moment theory for linear problems used to check the particle dynamics.

pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod linalg;
pub mod meanfield;
pub mod models;
pub mod rng;
pub mod samplers;

pub use ensemble::{Ensemble, GaussianMoments, Marginal};
pub use error::{Error, Result};
pub use linalg::SpdMatrix;
pub use rng::RngStream;
