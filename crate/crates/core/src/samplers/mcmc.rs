use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::models::InverseProblem;
use crate::rng::{domain, RngStream};

#[derive(Debug, Clone)]
pub struct McmcConfig {
    pub n_samples: usize,
    /// `τ` for random-walk proposals, `β` for pCN.
    pub step_scale: f64,
    /// Random-walk proposal covariance, scaled by `step_scale`.
    pub proposal_cov: Option<SpdMatrix>,
    pub init: DVector<f64>,
}

impl McmcConfig {
    /// Random-walk setup seeded by a particle ensemble: proposal covariance
    /// `τ C(U)` and the chain started at the ensemble mean.
    pub fn from_ensemble(e: &Ensemble, n_samples: usize, tau: f64) -> Result<Self> {
        Ok(Self {
            n_samples,
            step_scale: tau,
            proposal_cov: Some(SpdMatrix::new(e.covariance())?),
            init: e.mean(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    /// The state after each proposal, accepted or not.
    pub samples: Vec<DVector<f64>>,
    pub acceptance_rate: f64,
}

fn chain_rng(rng: &RngStream) -> ChaCha20Rng {
    rng.with_domain(domain::MCMC).stream(0, 0).rng()
}

fn normals(rng: &mut ChaCha20Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Proposals whose forward solve fails numerically are rejected, not fatal.
fn energy_or_reject(value: Result<f64>) -> Result<f64> {
    match value {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) | Err(Error::NonFinite(_)) | Err(Error::LinearSolve(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

fn accept(rng: &mut ChaCha20Rng, log_alpha: f64) -> bool {
    log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha
}

fn check_init(p: &InverseProblem, init: &DVector<f64>) -> Result<()> {
    if init.len() != p.input_dim() {
        return Err(Error::dim(format!(
            "chain start of length {}, problem has {}",
            init.len(),
            p.input_dim()
        )));
    }
    Ok(())
}

fn finish(samples: Vec<DVector<f64>>, accepted: usize) -> ChainResult {
    let proposed = samples.len();
    ChainResult {
        samples,
        acceptance_rate: if proposed == 0 { 0.0 } else { accepted as f64 / proposed as f64 },
    }
}

/// Random-walk Metropolis–Hastings targeting `exp(-Φ_R)`.
pub fn rwmh_chain(p: &InverseProblem, cfg: &McmcConfig, rng: &RngStream) -> Result<ChainResult> {
    check_init(p, &cfg.init)?;
    if !(cfg.step_scale > 0.0) {
        return Err(Error::InvalidArgument(format!("RWMH step scale must be positive, got {}", cfg.step_scale)));
    }
    let cov = cfg
        .proposal_cov
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("RWMH needs a proposal covariance".into()))?;
    if cov.dim() != p.input_dim() {
        return Err(Error::dim(format!("proposal covariance is {0}x{0}, problem has {1}", cov.dim(), p.input_dim())));
    }
    let root: DMatrix<f64> = cov.cholesky_factor() * cfg.step_scale.sqrt();
    let mut rng = chain_rng(rng);
    let mut u = cfg.init.clone();
    let mut energy = p.misfit_phi_r(&u)?;
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut accepted = 0;
    for _ in 0..cfg.n_samples {
        let proposal = &u + &root * normals(&mut rng, u.len());
        let proposed_energy = energy_or_reject(p.misfit_phi_r(&proposal))?;
        if accept(&mut rng, energy - proposed_energy) {
            u = proposal;
            energy = proposed_energy;
            accepted += 1;
        }
        samples.push(u.clone());
    }
    Ok(finish(samples, accepted))
}

/// Preconditioned Crank–Nicolson Metropolis for the prior `N(0, Γ₀)`.
pub fn pcn_chain(p: &InverseProblem, cfg: &McmcConfig, rng: &RngStream) -> Result<ChainResult> {
    check_init(p, &cfg.init)?;
    let beta = cfg.step_scale;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!("pCN beta must lie in (0, 1], got {beta}")));
    }
    let prior_root = p.gamma0().cholesky_factor();
    let contraction = (1.0 - beta * beta).sqrt();
    let mut rng = chain_rng(rng);
    let mut u = cfg.init.clone();
    let mut misfit = p.misfit_phi(&u)?;
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut accepted = 0;
    for _ in 0..cfg.n_samples {
        let zeta = &prior_root * normals(&mut rng, u.len());
        let proposal = &u * contraction + zeta * beta;
        let proposed_misfit = energy_or_reject(p.misfit_phi(&proposal))?;
        if accept(&mut rng, misfit - proposed_misfit) {
            u = proposal;
            misfit = proposed_misfit;
            accepted += 1;
        }
        samples.push(u.clone());
    }
    Ok(finish(samples, accepted))
}
