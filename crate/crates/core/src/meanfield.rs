//! Gaussian moment theory for linear forward maps.
//!
//! For `G(u) = A u` the Gaussian family is invariant under the mean-field
//! EKS and noisy-EKI flows, and the moments obey closed ODEs. This module
//! provides those ODEs, their exact solutions, and closed-form Gaussian
//! information functionals used as oracles for the particle samplers.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::GaussianMoments;
use crate::error::{Error, Result};
use crate::linalg::{check_square, min_eigenvalue, psd_sqrt, symmetrize, SpdMatrix};

/// Smallest covariance eigenvalue tolerated by [`integrate_moments`].
pub const MIN_COV_EIGENVALUE: f64 = 1e-12;


/// The Gaussian posterior `N(u0, B)` of a linear problem, with
/// `B⁻¹ = AᵀΓ⁻¹A + Γ₀⁻¹`, `r = AᵀΓ⁻¹y` and `u0 = B r`.
#[derive(Debug, Clone)]
pub struct LinearPosterior {
    b: SpdMatrix,
    b_inv: DMatrix<f64>,
    r: DVector<f64>,
    u0: DVector<f64>,
    /// `Φ_R(u0)`, needed for the normalising constant.
    phi_r_at_mode: f64,
}

impl LinearPosterior {
    pub fn b(&self) -> &SpdMatrix {
        &self.b
    }

    pub fn b_matrix(&self) -> &DMatrix<f64> {
        self.b.matrix()
    }

    pub fn b_inv(&self) -> &DMatrix<f64> {
        &self.b_inv
    }

    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn u0(&self) -> &DVector<f64> {
        &self.u0
    }

    pub fn phi_r_at_mode(&self) -> f64 {
        self.phi_r_at_mode
    }

    pub fn dim(&self) -> usize {
        self.u0.len()
    }

    /// `ln ∫ e^{-Φ_R} = -Φ_R(u0) + (d/2) ln 2π + ½ ln det B`.
    pub fn ln_normalizer(&self) -> f64 {
        -self.phi_r_at_mode + 0.5 * self.dim() as f64 * (2.0 * PI).ln() + 0.5 * self.b.ln_det()
    }

    /// The Gibbs measure `N(u0, B)`.
    pub fn gibbs(&self) -> GaussianMoments {
        GaussianMoments {
            mean: self.u0.clone(),
            cov: self.b.matrix().clone(),
        }
    }
}

pub fn linear_posterior(
    a_matrix: &DMatrix<f64>,
    gamma: &SpdMatrix,
    gamma0: &SpdMatrix,
    y: &DVector<f64>,
) -> Result<LinearPosterior> {
    let (k, d) = a_matrix.shape();
    if gamma.dim() != k || y.len() != k || gamma0.dim() != d {
        return Err(Error::dim(format!(
            "A is {k}x{d}, data has length {}, noise covariance is {g}x{g}, prior covariance is {g0}x{g0}",
            y.len(),
            g = gamma.dim(),
            g0 = gamma0.dim()
        )));
    }
    let b_inv = symmetrize(&(a_matrix.transpose() * gamma.solve_matrix(a_matrix) + gamma0.inverse()));
    let b = SpdMatrix::new(symmetrize(&SpdMatrix::new(b_inv.clone())?.inverse()))?;
    let r = a_matrix.transpose() * gamma.solve(y);
    let u0 = b.matrix() * &r;
    let phi_r_at_mode = 0.5 * gamma.weighted_norm_sq(&(y - a_matrix * &u0))? + 0.5 * gamma0.weighted_norm_sq(&u0)?;
    Ok(LinearPosterior {
        b,
        b_inv,
        r,
        u0,
        phi_r_at_mode,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub t: f64,
}

impl MomentState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, t: f64) -> Self {
        Self { mean, cov, t }
    }

    pub fn moments(&self) -> GaussianMoments {
        GaussianMoments {
            mean: self.mean.clone(),
            cov: self.cov.clone(),
        }
    }
}

/// Right-hand side of a closed moment system.
pub trait MomentRhs {
    fn rhs(&self, s: &MomentState) -> (DVector<f64>, DMatrix<f64>);
}

impl<F: Fn(&MomentState) -> (DVector<f64>, DMatrix<f64>)> MomentRhs for F {
    fn rhs(&self, s: &MomentState) -> (DVector<f64>, DMatrix<f64>) {
        self(s)
    }
}

/// `ṁ = -𝔠(B⁻¹𝔪 - r)`, `𝔠̇ = -2𝔠B⁻¹𝔠 + 2𝔠`.
pub fn eks_moment_rhs(s: &MomentState, post: &LinearPosterior) -> (DVector<f64>, DMatrix<f64>) {
    let dm = -(&s.cov * (post.b_inv() * &s.mean - post.r()));
    let dc = symmetrize(&(&s.cov * post.b_inv() * &s.cov * -2.0 + &s.cov * 2.0));
    (dm, dc)
}

/// The EKS moment system of a linear posterior.
pub struct EksMoments<'a>(pub &'a LinearPosterior);

impl MomentRhs for EksMoments<'_> {
    fn rhs(&self, s: &MomentState) -> (DVector<f64>, DMatrix<f64>) {
        eks_moment_rhs(s, self.0)
    }
}

/// `ṁ = -𝔠(AᵀΓ⁻¹A 𝔪 - r)`, `𝔠̇ = -𝔠 AᵀΓ⁻¹A 𝔠`.
pub fn noisy_eki_moment_rhs(
    s: &MomentState,
    a_matrix: &DMatrix<f64>,
    gamma: &SpdMatrix,
    r: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    NoisyEkiMoments::new(a_matrix, gamma, r.clone()).rhs(s)
}

/// The noisy-EKI moment system, with the precision `AᵀΓ⁻¹A` precomputed.
pub struct NoisyEkiMoments {
    precision: DMatrix<f64>,
    r: DVector<f64>,
}

impl NoisyEkiMoments {
    pub fn new(a_matrix: &DMatrix<f64>, gamma: &SpdMatrix, r: DVector<f64>) -> Self {
        Self {
            precision: symmetrize(&(a_matrix.transpose() * gamma.solve_matrix(a_matrix))),
            r,
        }
    }
}

impl MomentRhs for NoisyEkiMoments {
    fn rhs(&self, s: &MomentState) -> (DVector<f64>, DMatrix<f64>) {
        let dm = -(&s.cov * (&self.precision * &s.mean - &self.r));
        let dc = symmetrize(&-(&s.cov * &self.precision * &s.cov));
        (dm, dc)
    }
}

/// `𝔠(t)⁻¹ = (𝔠(0)⁻¹ - B⁻¹) e^{-2t} + B⁻¹`.
fn exact_precision(t: f64, c0_inv: &DMatrix<f64>, post: &LinearPosterior) -> DMatrix<f64> {
    let decay = (-2.0 * t).exp();
    symmetrize(&((c0_inv - post.b_inv()) * decay + post.b_inv()))
}

/// Closed-form mean deviation. In coordinates whitened by `B^{½}` the
/// precision is `I + Q e^{-2t}` with `Q` fixed, so each eigendirection of `Q`
/// with eigenvalue `q` decays by `√((1 + q) / (e^{2t} + q))`.
fn mean_deviation(t: f64, e0: &DVector<f64>, c0_inv: &DMatrix<f64>, post: &LinearPosterior) -> Result<DVector<f64>> {
    let b_root = psd_sqrt(post.b_matrix())?;
    let b_root_spd = SpdMatrix::new(b_root.clone())?;
    let whitened_precision = symmetrize(&(&b_root * c0_inv * &b_root));
    let eig = whitened_precision.symmetric_eigen();
    let growth = (2.0 * t).exp();
    let factors = eig.eigenvalues.map(|p| (p / (growth + p - 1.0)).sqrt());
    let z = eig.eigenvectors.transpose() * b_root_spd.solve(e0);
    Ok(&b_root * (&eig.eigenvectors * z.component_mul(&factors)))
}

/// Exact moments of the EKS mean-field flow at time `t`.
///
/// Both moments are closed form, for any SPD `c0`.
pub fn eks_moment_exact(t: f64, m0: &DVector<f64>, c0: &DMatrix<f64>, post: &LinearPosterior) -> Result<MomentState> {
    check_square(c0, "initial covariance")?;
    if c0.nrows() != post.dim() || m0.len() != post.dim() {
        return Err(Error::dim(format!(
            "initial moments of dimension {}/{}, posterior has {}",
            m0.len(),
            c0.nrows(),
            post.dim()
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be non-negative, got {t}")));
    }
    let c0_inv = SpdMatrix::new(c0.clone())?.inverse();
    let precision = SpdMatrix::new(exact_precision(t, &c0_inv, post))?;
    let cov = precision.inverse();
    let e0 = m0 - post.u0();
    let e = if t == 0.0 { e0 } else { mean_deviation(t, &e0, &c0_inv, post)? };
    Ok(MomentState {
        mean: post.u0() + e,
        cov,
        t,
    })
}

/// `d/dt det 𝔠 = -2 det 𝔠 · Tr(B⁻¹𝔠 - I)`.
pub fn det_rate(s: &MomentState, post: &LinearPosterior) -> f64 {
    let d = s.cov.nrows();
    -2.0 * s.cov.determinant() * (post.b_inv() * &s.cov - DMatrix::identity(d, d)).trace()
}

/// `KL(p ‖ q)` in nats; `+∞` when `p.cov` is singular.
pub fn gaussian_kl(p: &GaussianMoments, q: &GaussianMoments) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::dim(format!("Gaussians of dimension {} and {}", p.dim(), q.dim())));
    }
    let q_cov = SpdMatrix::new(q.cov.clone())?;
    let p_cov = match SpdMatrix::new(p.cov.clone()) {
        Ok(c) => c,
        Err(Error::NotSpd(_)) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    let dm = &p.mean - &q.mean;
    let d = p.dim() as f64;
    let trace = q_cov.solve_matrix(&p.cov).trace();
    let quad = q_cov.weighted_norm_sq(&dm)?;
    Ok(0.5 * (trace - d + quad + q_cov.ln_det() - p_cov.ln_det()))
}

/// `E(ρ) = ∫ ρ Φ_R + ρ ln ρ` for Gaussian `ρ`, evaluated as
/// `KL(ρ ‖ ρ∞) - ln ∫ e^{-Φ_R}`.
pub fn gaussian_energy(p: &GaussianMoments, post: &LinearPosterior) -> Result<f64> {
    Ok(gaussian_kl(p, &post.gibbs())? - post.ln_normalizer())
}

/// `I_Λ(ρ ‖ ρ∞) = ∫ ρ ⟨∇ln(ρ/ρ∞), Λ ∇ln(ρ/ρ∞)⟩` for Gaussian `ρ = N(m, C)`:
/// `Tr(Λ G C G) + wᵀΛw` with `G = B⁻¹ - C⁻¹` and `w = B⁻¹(m - u0)`.
pub fn kalman_fisher(p: &GaussianMoments, post: &LinearPosterior, lambda_matrix: &DMatrix<f64>) -> Result<f64> {
    let d = post.dim();
    if p.dim() != d || lambda_matrix.shape() != (d, d) {
        return Err(Error::dim(format!(
            "Gaussian of dimension {}, weight {}x{}, posterior of dimension {d}",
            p.dim(),
            lambda_matrix.nrows(),
            lambda_matrix.ncols()
        )));
    }
    let c_inv = SpdMatrix::new(p.cov.clone())?.inverse();
    let g1 = post.b_inv() - c_inv;
    let w = post.b_inv() * (&p.mean - post.u0());
    Ok((lambda_matrix * &g1 * &p.cov * &g1).trace() + w.dot(&(lambda_matrix * &w)))
}

fn rk4_step(rhs: &dyn MomentRhs, s: &MomentState, dt: f64) -> MomentState {
    let shifted = |k: &(DVector<f64>, DMatrix<f64>), h: f64| MomentState {
        mean: &s.mean + &k.0 * h,
        cov: &s.cov + &k.1 * h,
        t: s.t + h,
    };
    let k1 = rhs.rhs(s);
    let k2 = rhs.rhs(&shifted(&k1, 0.5 * dt));
    let k3 = rhs.rhs(&shifted(&k2, 0.5 * dt));
    let k4 = rhs.rhs(&shifted(&k3, dt));
    let w = dt / 6.0;
    MomentState {
        mean: &s.mean + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * w,
        cov: symmetrize(&(&s.cov + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * w)),
        t: s.t + dt,
    }
}

/// Classical fixed-step RK4 from `initial.t` to `t_end`, returning every
/// state. The covariance is symmetrised after each step. A final shorter
/// step is taken when `t_end - initial.t` is not a multiple of `dt`.
pub fn integrate_moments(rhs: &dyn MomentRhs, initial: &MomentState, t_end: f64, dt: f64) -> Result<Vec<MomentState>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let span = t_end - initial.t;
    if !(span >= 0.0) {
        return Err(Error::InvalidArgument(format!("t_end {t_end} precedes the initial time {}", initial.t)));
    }
    let full = (span / dt * (1.0 + 1e-12)).floor() as usize;
    let mut out = Vec::with_capacity(full + 2);
    out.push(initial.clone());
    let mut s = initial.clone();
    for n in 1..=full {
        let mut next = rk4_step(rhs, &s, dt);
        next.t = initial.t + n as f64 * dt;
        s = checked(next, n)?;
        out.push(s.clone());
    }
    let rest = t_end - s.t;
    if rest > 1e-12 * dt {
        let mut next = rk4_step(rhs, &s, rest);
        next.t = t_end;
        out.push(checked(next, full + 1)?);
    }
    Ok(out)
}

fn checked(s: MomentState, step: usize) -> Result<MomentState> {
    if s.mean.iter().chain(s.cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("moment trajectory".into()).at_step(step));
    }
    let min = min_eigenvalue(&s.cov);
    if min < MIN_COV_EIGENVALUE {
        return Err(Error::NotPsd { min_eigenvalue: min }.at_step(step));
    }
    Ok(s)
}

/// CSV with columns `t`, mean components, covariance upper triangle, and the
/// KL, energy and Kalman–Fisher information relative to the posterior.
pub fn moment_trajectory_csv(traj: &[MomentState], post: &LinearPosterior) -> Result<String> {
    let d = post.dim();
    let mut out = String::from("t");
    for i in 0..d {
        let _ = write!(out, ",m{i}");
    }
    for i in 0..d {
        for j in i..d {
            let _ = write!(out, ",c{i}_{j}");
        }
    }
    out.push_str(",kl,energy,kalman_fisher\n");
    for s in traj {
        let g = s.moments();
        let _ = write!(out, "{:e}", s.t);
        for v in s.mean.iter() {
            let _ = write!(out, ",{v:e}");
        }
        for i in 0..d {
            for j in i..d {
                let _ = write!(out, ",{:e}", s.cov[(i, j)]);
            }
        }
        let kl = gaussian_kl(&g, &post.gibbs())?;
        let _ = writeln!(
            out,
            ",{kl:e},{:e},{:e}",
            kl - post.ln_normalizer(),
            kalman_fisher(&g, post, &s.cov)?
        );
    }
    Ok(out)
}
