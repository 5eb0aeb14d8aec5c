use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{sqrt_scaled, SamplerKind, SamplerState, SdeConfig};
use crate::ensemble::{centered, column_cross_covariance, stack_columns, Ensemble};
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, SpdMatrix};
use crate::models::InverseProblem;
use crate::rng::{domain, RngStream};

/// Ensembles whose covariance trace falls below this are held fixed.
pub const DEGENERATE_TRACE: f64 = 1e-14;

/// `D[j, k] = (1/J) ⟨G(u⁽ᵏ⁾) - Ḡ, G(u⁽ʲ⁾) - y⟩_Γ`.
pub fn eks_drift_matrix(
    e: &Ensemble,
    g_values: &[DVector<f64>],
    y: &DVector<f64>,
    gamma: &SpdMatrix,
) -> Result<DMatrix<f64>> {
    Ok(Interaction::new(e, g_values, y, gamma)?.matrix())
}

/// `min(dt_max, dt0 / (‖D‖_F + eps))`, or `dt0` when not adaptive.
pub fn adaptive_dt(d_matrix: &DMatrix<f64>, cfg: &SdeConfig) -> f64 {
    dt_from_norm(d_matrix.norm(), cfg)
}

fn dt_from_norm(norm: f64, cfg: &SdeConfig) -> f64 {
    if !cfg.adaptive {
        return cfg.dt0;
    }
    (cfg.dt0 / (norm + cfg.eps)).min(cfg.dt_max)
}

/// The interaction matrix in factored form `D = Rᵀ W / J`, with residuals
/// `R = [G(u⁽ʲ⁾) - y]` and weighted deviations `W = Γ⁻¹ [G(u⁽ᵏ⁾) - Ḡ]`.
/// Both factors are `K × J`, so nothing of size `J × J` is formed.
pub(super) struct Interaction {
    resid: DMatrix<f64>,
    weighted_dev: DMatrix<f64>,
    size: usize,
}

impl Interaction {
    pub(super) fn new(e: &Ensemble, g_values: &[DVector<f64>], y: &DVector<f64>, gamma: &SpdMatrix) -> Result<Self> {
        let g = stack_columns(g_values, e.size())?;
        if g.nrows() != y.len() || gamma.dim() != y.len() {
            return Err(Error::dim(format!(
                "forward values of length {}, data of length {}, noise covariance {2}x{2}",
                g.nrows(),
                y.len(),
                gamma.dim()
            )));
        }
        let weighted_dev = gamma.solve_matrix(&centered(&g));
        let mut resid = g;
        for mut col in resid.column_iter_mut() {
            col -= y;
        }
        Ok(Self {
            resid,
            weighted_dev,
            size: e.size(),
        })
    }

    pub(super) fn matrix(&self) -> DMatrix<f64> {
        self.resid.transpose() * &self.weighted_dev / self.size as f64
    }

    /// `‖D‖_F² = tr((R Rᵀ)(W Wᵀ)) / J²`.
    pub(super) fn frobenius_norm(&self) -> f64 {
        let rr = &self.resid * self.resid.transpose();
        let ww = &self.weighted_dev * self.weighted_dev.transpose();
        let sq = rr.component_mul(&ww).sum().max(0.0);
        sq.sqrt() / self.size as f64
    }

    /// `u⁽ʲ⁾ - dt Σ_k D[j, k] u⁽ᵏ⁾` for every particle.
    pub(super) fn drift(&self, u: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
        let gain = u * self.weighted_dev.transpose() / self.size as f64;
        u - gain * &self.resid * dt
    }
}

fn particle_noise(rng: &RngStream, j: usize, n: usize, dim: usize) -> DVector<f64> {
    rng.with_domain(domain::PARTICLE_NOISE)
        .stream(j as u64, n as u64)
        .standard_normals(dim)
}

/// Step size, clipped so the final step lands on `t_end`.
fn step_size(d: &Interaction, s: &SamplerState, cfg: &SdeConfig) -> (f64, f64) {
    let dt = dt_from_norm(d.frobenius_norm(), cfg);
    if s.t < cfg.t_end && s.t + dt >= cfg.t_end {
        (cfg.t_end - s.t, cfg.t_end)
    } else {
        (dt, s.t + dt)
    }
}

fn next_state(s: &SamplerState, particles: DMatrix<f64>, dt: f64, t: f64) -> Result<SamplerState> {
    Ok(SamplerState {
        ensemble: Ensemble::new(particles)?,
        t,
        n: s.n + 1,
        last_dt: dt,
    })
}

/// Stages (ii) and (iii) of the split step: the implicit prior solve
/// `(I + dt P Γ₀⁻¹) u* = v` and the noise `√(2 dt P) ξ`, with `P` the
/// ensemble covariance or the identity.
fn prior_solve_and_noise(
    s: &SamplerState,
    v: DMatrix<f64>,
    cov: &DMatrix<f64>,
    dt: f64,
    p: &InverseProblem,
    cfg: &SdeConfig,
    rng: &RngStream,
) -> Result<DMatrix<f64>> {
    let d = s.ensemble.dim();
    let precond = if cfg.precondition_identity {
        DMatrix::identity(d, d)
    } else {
        cov.clone()
    };
    // P Γ₀⁻¹ = (Γ₀⁻¹ P)ᵀ for symmetric P and Γ₀.
    let system = DMatrix::identity(d, d) + p.gamma0().solve_matrix(&precond).transpose() * dt;
    let mut u = system
        .lu()
        .solve(&v)
        .ok_or_else(|| Error::LinearSolve("singular implicit prior system".into()))?;
    if cfg.suppress_noise {
        return Ok(u);
    }
    let root = sqrt_scaled(&precond, 2.0 * dt)?;
    for (j, mut col) in u.column_iter_mut().enumerate() {
        col += &root * particle_noise(rng, j, s.n, d);
    }
    Ok(u)
}

fn is_degenerate(cov: &DMatrix<f64>) -> bool {
    cov.trace() < DEGENERATE_TRACE
}

fn hold(s: &SamplerState, dt: f64, t: f64) -> SamplerState {
    log::warn!(
        "ensemble covariance trace below {DEGENERATE_TRACE:e} at step {}; holding the collapsed state",
        s.n
    );
    SamplerState {
        ensemble: s.ensemble.clone(),
        t,
        n: s.n + 1,
        last_dt: dt,
    }
}

pub(super) fn checked_noise_root(p: &InverseProblem, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = p.output_dim();
    if sigma.nrows() != k || sigma.ncols() != k {
        return Err(Error::dim(format!(
            "noise covariance is {}x{}, data dimension is {k}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    psd_sqrt(sigma)
}

/// One step of `kind` from `s`, given `g = G(U_n)`. Also reports whether the
/// ensemble was held as degenerate.
pub(super) fn advance(
    kind: &SamplerKind,
    sigma_root: Option<&DMatrix<f64>>,
    s: &SamplerState,
    g: &[DVector<f64>],
    p: &InverseProblem,
    cfg: &SdeConfig,
    rng: &RngStream,
) -> Result<(SamplerState, bool)> {
    let e = &s.ensemble;
    let u = e.particles();
    let cov = e.covariance();
    let d_matrix = Interaction::new(e, g, p.y(), p.gamma())?;
    let (dt, t) = step_size(&d_matrix, s, cfg);
    let holds_when_collapsed = !(cfg.precondition_identity && matches!(kind, SamplerKind::Eks | SamplerKind::Langevin));
    if holds_when_collapsed && is_degenerate(&cov) {
        return Ok((hold(s, dt, t), true));
    }
    let particles = match kind {
        SamplerKind::Eks => {
            let v = d_matrix.drift(u, dt);
            prior_solve_and_noise(s, v, &cov, dt, p, cfg, rng)?
        }
        SamplerKind::Eki => d_matrix.drift(u, dt),
        SamplerKind::NoisyEki { .. } => {
            let mut next = d_matrix.drift(u, dt);
            let root = sigma_root.ok_or_else(|| Error::InvalidArgument("noisy EKI without a noise root".into()))?;
            if !cfg.suppress_noise && root.iter().any(|&v| v != 0.0) {
                let gm = stack_columns(g, e.size())?;
                let c_up = column_cross_covariance(u, &gm);
                // C_up Γ⁻¹ √Σ, a d × K gain applied to every ξ⁽ʲ⁾.
                let gain = p.gamma().solve_matrix(&c_up.transpose()).transpose() * root * dt.sqrt();
                for (j, mut col) in next.column_iter_mut().enumerate() {
                    col += &gain * particle_noise(rng, j, s.n, root.ncols());
                }
            }
            next
        }
        SamplerKind::Langevin => {
            let v = if p.model().is_affine() {
                // The ensemble secant equals the jacobian for affine maps, so
                // the gradient drift is the interaction-matrix drift.
                d_matrix.drift(u, dt)
            } else {
                let w = gradient_terms(e, g, p)?;
                let precond_w = if cfg.precondition_identity { w } else { &cov * w };
                u - precond_w * dt
            };
            prior_solve_and_noise(s, v, &cov, dt, p, cfg, rng)?
        }
    };
    Ok((next_state(s, particles, dt, t)?, false))
}

/// Columns `DG(u⁽ʲ⁾)ᵀ Γ⁻¹ (G(u⁽ʲ⁾) - y)`.
fn gradient_terms(e: &Ensemble, g: &[DVector<f64>], p: &InverseProblem) -> Result<DMatrix<f64>> {
    let cols: Vec<DVector<f64>> = (0..e.size())
        .into_par_iter()
        .map(|j| {
            let jac = p.model().jacobian(&e.particle(j).into_owned())?;
            Ok(jac.transpose() * p.gamma().solve(&(&g[j] - p.y())))
        })
        .collect::<Result<_>>()?;
    stack_columns(&cols, e.size())
}

fn single_step(
    kind: SamplerKind,
    s: &SamplerState,
    p: &InverseProblem,
    cfg: &SdeConfig,
    rng: &RngStream,
) -> Result<SamplerState> {
    cfg.validate()?;
    let sigma_root = match &kind {
        SamplerKind::NoisyEki { sigma } => Some(checked_noise_root(p, sigma)?),
        SamplerKind::Langevin if !p.model().has_jacobian() => return Err(Error::MissingJacobian),
        _ => None,
    };
    let g = p.forward_ensemble(&s.ensemble)?;
    advance(&kind, sigma_root.as_ref(), s, &g, p, cfg, rng).map(|(next, _)| next)
}

/// Linearly implicit split step of the ensemble Kalman sampler.
pub fn eks_step(s: &SamplerState, p: &InverseProblem, cfg: &SdeConfig, rng: &RngStream) -> Result<SamplerState> {
    single_step(SamplerKind::Eks, s, p, cfg, rng)
}

/// Explicit Euler step of deterministic ensemble Kalman inversion.
pub fn eki_step(s: &SamplerState, p: &InverseProblem, cfg: &SdeConfig) -> Result<SamplerState> {
    single_step(SamplerKind::Eki, s, p, cfg, &RngStream::new(0))
}

/// Euler–Maruyama step of ensemble Kalman inversion with data-space noise `Σ`.
pub fn noisy_eki_step(
    s: &SamplerState,
    p: &InverseProblem,
    sigma: &DMatrix<f64>,
    cfg: &SdeConfig,
    rng: &RngStream,
) -> Result<SamplerState> {
    single_step(SamplerKind::NoisyEki { sigma: sigma.clone() }, s, p, cfg, rng)
}

/// Split step of covariance-preconditioned Langevin particles using the exact
/// gradient of the misfit.
pub fn langevin_particles_step(
    s: &SamplerState,
    p: &InverseProblem,
    cfg: &SdeConfig,
    rng: &RngStream,
) -> Result<SamplerState> {
    single_step(SamplerKind::Langevin, s, p, cfg, rng)
}
