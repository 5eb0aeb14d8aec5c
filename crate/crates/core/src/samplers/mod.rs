//! Interacting-particle dynamics and Metropolis baselines.
//!
//! Particle methods advance a [`SamplerState`] one step at a time. The
//! [`SamplerDriver`] caches forward evaluations so each ensemble is pushed
//! through the model exactly once, and records a [`StepStats`] row per step.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::models::InverseProblem;
use crate::rng::RngStream;

mod mcmc;
mod particles;

pub use mcmc::{pcn_chain, rwmh_chain, ChainResult, McmcConfig};
pub use particles::{
    adaptive_dt, eki_step, eks_drift_matrix, eks_step, langevin_particles_step, noisy_eki_step,
    DEGENERATE_TRACE,
};

/// Hard cap on the number of steps when [`SdeConfig::max_steps`] is unset.
pub const DEFAULT_MAX_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    pub ensemble: Ensemble,
    /// Accumulated simulated time.
    pub t: f64,
    /// Number of steps taken.
    pub n: usize,
    pub last_dt: f64,
}

impl SamplerState {
    pub fn new(ensemble: Ensemble) -> Self {
        Self {
            ensemble,
            t: 0.0,
            n: 0,
            last_dt: 0.0,
        }
    }
}

/// Time stepping for the particle dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeConfig {
    /// Base step `τ₀`; the fixed step when `adaptive` is false.
    pub dt0: f64,
    pub dt_max: f64,
    pub eps: f64,
    /// Simulated-time horizon. The final step is shortened to land on it.
    pub t_end: f64,
    pub adaptive: bool,
    pub max_steps: Option<usize>,
    /// Replace the ensemble covariance by the identity in the prior solve
    /// and the noise.
    pub precondition_identity: bool,
    /// Force all noise increments to zero.
    pub suppress_noise: bool,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            dt0: 1.0,
            dt_max: 1.0,
            eps: 1e-8,
            t_end: f64::INFINITY,
            adaptive: true,
            max_steps: None,
            precondition_identity: false,
            suppress_noise: false,
        }
    }
}

impl SdeConfig {
    /// Non-adaptive steps of size `dt` up to `t_end`.
    pub fn fixed(dt: f64, t_end: f64) -> Self {
        Self {
            dt0: dt,
            dt_max: dt,
            t_end,
            adaptive: false,
            ..Self::default()
        }
    }

    /// Adaptive steps, stopping after `steps` iterations.
    pub fn iterations(steps: usize) -> Self {
        Self {
            max_steps: Some(steps),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt0 > 0.0 && self.dt0.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt0 must be positive, got {}", self.dt0)));
        }
        if !(self.dt_max > 0.0) {
            return Err(Error::InvalidArgument(format!("dt_max must be positive, got {}", self.dt_max)));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be non-negative, got {}", self.eps)));
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::InvalidArgument(format!("t_end must be non-negative, got {}", self.t_end)));
        }
        Ok(())
    }

    fn step_cap(&self) -> usize {
        self.max_steps.unwrap_or(DEFAULT_MAX_STEPS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplerKind {
    Eks,
    Eki,
    /// Noisy EKI with data-space noise covariance `Σ`.
    NoisyEki { sigma: DMatrix<f64> },
    Langevin,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Eks => "eks",
            SamplerKind::Eki => "eki",
            SamplerKind::NoisyEki { .. } => "noisy_eki",
            SamplerKind::Langevin => "langevin",
        }
    }
}

/// Summary of the ensemble after a step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub mean_misfit: f64,
    pub mean_misfit_reg: f64,
    pub cov_trace: f64,
    pub mean: DVector<f64>,
    pub degenerate: bool,
}

/// Forward images of the current ensemble, shared by a step and its stats.
fn ensemble_stats(
    p: &InverseProblem,
    s: &SamplerState,
    g: &[DVector<f64>],
    degenerate: bool,
) -> Result<StepStats> {
    let j = s.ensemble.size();
    let mut phi = 0.0;
    let mut phi_r = 0.0;
    for (k, gk) in g.iter().enumerate() {
        let m = p.misfit_from_output(gk)?;
        phi += m;
        phi_r += m + p.prior_term(&s.ensemble.particle(k).into_owned())?;
    }
    Ok(StepStats {
        step: s.n,
        t: s.t,
        dt: s.last_dt,
        mean_misfit: phi / j as f64,
        mean_misfit_reg: phi_r / j as f64,
        cov_trace: s.ensemble.covariance().trace(),
        mean: s.ensemble.mean(),
        degenerate,
    })
}

/// Steps one particle method, caching `G` of the current ensemble.
pub struct SamplerDriver<'a> {
    problem: &'a InverseProblem,
    kind: SamplerKind,
    cfg: SdeConfig,
    rng: RngStream,
    sigma_root: Option<DMatrix<f64>>,
    state: SamplerState,
    g: Vec<DVector<f64>>,
}

impl<'a> SamplerDriver<'a> {
    pub fn new(
        problem: &'a InverseProblem,
        kind: SamplerKind,
        cfg: SdeConfig,
        init: Ensemble,
        rng: RngStream,
    ) -> Result<Self> {
        cfg.validate()?;
        if init.dim() != problem.input_dim() {
            return Err(Error::dim(format!(
                "initial ensemble of dimension {}, problem has {}",
                init.dim(),
                problem.input_dim()
            )));
        }
        let sigma_root = match &kind {
            SamplerKind::NoisyEki { sigma } => Some(particles::checked_noise_root(problem, sigma)?),
            SamplerKind::Langevin if !problem.model().has_jacobian() => return Err(Error::MissingJacobian),
            _ => None,
        };
        let state = SamplerState::new(init);
        let g = problem.forward_ensemble(&state.ensemble)?;
        Ok(Self {
            problem,
            kind,
            cfg,
            rng,
            sigma_root,
            state,
            g,
        })
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn forward_values(&self) -> &[DVector<f64>] {
        &self.g
    }

    pub fn into_state(self) -> SamplerState {
        self.state
    }

    pub fn finished(&self) -> bool {
        self.state.t >= self.cfg.t_end || self.state.n >= self.cfg.step_cap()
    }

    pub fn current_stats(&self) -> Result<StepStats> {
        ensemble_stats(self.problem, &self.state, &self.g, false)
    }

    /// Takes one step, or returns `None` once the horizon or step cap is hit.
    pub fn step(&mut self) -> Result<Option<StepStats>> {
        if self.finished() {
            return Ok(None);
        }
        let n = self.state.n;
        let (next, degenerate) = particles::advance(
            &self.kind,
            self.sigma_root.as_ref(),
            &self.state,
            &self.g,
            self.problem,
            &self.cfg,
            &self.rng,
        )
        .map_err(|e| e.at_step(n))?;
        let g = self.problem.forward_ensemble(&next.ensemble).map_err(|e| e.at_step(n + 1))?;
        if next.ensemble.particles().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ensemble".into()).at_step(n + 1));
        }
        self.state = next;
        self.g = g;
        Ok(Some(ensemble_stats(self.problem, &self.state, &self.g, degenerate)?))
    }
}

/// Every state visited by [`run_sampler`], with `stats[i]` describing
/// `states[i + 1]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<SamplerState>,
    pub initial: StepStats,
    pub stats: Vec<StepStats>,
}

impl Trajectory {
    pub fn last(&self) -> &SamplerState {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Runs until `t ≥ t_end` or the step cap, keeping every state.
pub fn run_sampler(
    p: &InverseProblem,
    kind: SamplerKind,
    cfg: &SdeConfig,
    init: Ensemble,
    rng: RngStream,
) -> Result<Trajectory> {
    let mut driver = SamplerDriver::new(p, kind, cfg.clone(), init, rng)?;
    let initial = driver.current_stats()?;
    let mut states = vec![driver.state().clone()];
    let mut stats = Vec::new();
    while let Some(row) = driver.step()? {
        states.push(driver.state().clone());
        stats.push(row);
    }
    Ok(Trajectory {
        states,
        initial,
        stats,
    })
}

/// `psd_sqrt(Σ)`, validated against the data dimension.
pub fn noise_root(p: &InverseProblem, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    particles::checked_noise_root(p, sigma)
}

pub(crate) fn sqrt_scaled(m: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    psd_sqrt(&(m * scale))
}

#[cfg(test)]
mod tests;
