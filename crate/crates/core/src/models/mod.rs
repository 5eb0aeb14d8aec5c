//! Forward maps `G: R^d → R^K` and the misfit functionals built on them.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;

pub mod darcy;
pub mod elliptic;
pub mod linear;

pub use darcy::{DarcyConfig, DarcyModel, KlFieldSpec, ScalarGrid};
pub use elliptic::EllipticModel;
pub use linear::LinearModel;

/// A deterministic forward operator.
///
/// Implementations must be pure: the same `u` always yields the same output,
/// whichever thread evaluates it.
pub trait ForwardModel: Send + Sync + std::fmt::Debug {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>>;

    /// `K × d` derivative of [`eval`](Self::eval) at `u`.
    fn jacobian(&self, _u: &DVector<f64>) -> Result<DMatrix<f64>> {
        Err(Error::MissingJacobian)
    }

    fn has_jacobian(&self) -> bool {
        false
    }

    /// Whether `eval` is affine in `u`. For affine maps the directional
    /// derivative `DG(u)(v - w)` equals `G(v) - G(w)` for every `u`.
    fn is_affine(&self) -> bool {
        false
    }
}

/// The data `y`, noise covariance `Γ` and prior covariance `Γ₀` attached to a
/// forward model. The prior is the centred Gaussian `N(0, Γ₀)`.
#[derive(Debug, Clone)]
pub struct InverseProblem {
    model: Arc<dyn ForwardModel>,
    y: DVector<f64>,
    gamma: SpdMatrix,
    gamma0: SpdMatrix,
}

impl InverseProblem {
    pub fn new(
        model: Arc<dyn ForwardModel>,
        y: DVector<f64>,
        gamma: SpdMatrix,
        gamma0: SpdMatrix,
    ) -> Result<Self> {
        let (d, k) = (model.input_dim(), model.output_dim());
        if y.len() != k {
            return Err(Error::dim(format!("data has length {}, model outputs {k}", y.len())));
        }
        if gamma.dim() != k {
            return Err(Error::dim(format!("noise covariance is {0}x{0}, expected {k}x{k}", gamma.dim())));
        }
        if gamma0.dim() != d {
            return Err(Error::dim(format!("prior covariance is {0}x{0}, expected {d}x{d}", gamma0.dim())));
        }
        Ok(Self {
            model,
            y,
            gamma,
            gamma0,
        })
    }

    pub fn model(&self) -> &dyn ForwardModel {
        self.model.as_ref()
    }

    pub fn model_arc(&self) -> Arc<dyn ForwardModel> {
        Arc::clone(&self.model)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn gamma(&self) -> &SpdMatrix {
        &self.gamma
    }

    pub fn gamma0(&self) -> &SpdMatrix {
        &self.gamma0
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.model.output_dim()
    }

    fn check_input(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.input_dim() {
            return Err(Error::dim(format!(
                "parameter of length {}, model expects {}",
                u.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(u)?;
        self.model.eval(u)
    }

    /// `G(u⁽ʲ⁾)` for every particle, in particle order.
    pub fn forward_ensemble(&self, e: &Ensemble) -> Result<Vec<DVector<f64>>> {
        if e.dim() != self.input_dim() {
            return Err(Error::dim(format!(
                "ensemble of dimension {}, model expects {}",
                e.dim(),
                self.input_dim()
            )));
        }
        (0..e.size())
            .into_par_iter()
            .map(|j| self.model.eval(&e.particle(j).into_owned()))
            .collect()
    }

    /// `Φ` evaluated from a precomputed `G(u)`.
    pub fn misfit_from_output(&self, g: &DVector<f64>) -> Result<f64> {
        let r = &self.y - g;
        Ok(0.5 * self.gamma.weighted_norm_sq(&r)?)
    }

    /// `R(u) = ½‖u‖²_{Γ₀}`.
    pub fn prior_term(&self, u: &DVector<f64>) -> Result<f64> {
        Ok(0.5 * self.gamma0.weighted_norm_sq(u)?)
    }

    pub fn misfit_phi(&self, u: &DVector<f64>) -> Result<f64> {
        self.misfit_from_output(&self.forward(u)?)
    }

    pub fn misfit_phi_r(&self, u: &DVector<f64>) -> Result<f64> {
        Ok(self.misfit_phi(u)? + self.prior_term(u)?)
    }

    /// `∇Φ_R(u) = DG(u)ᵀ Γ⁻¹ (G(u) - y) + Γ₀⁻¹ u`.
    pub fn grad_phi_r(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(u)?;
        let jac = self.model.jacobian(u)?;
        let r = self.model.eval(u)? - &self.y;
        Ok(jac.transpose() * self.gamma.solve(&r) + self.gamma0.solve(u))
    }
}

/// `Φ(u) = ½‖y - G(u)‖²_Γ`.
pub fn misfit_phi(p: &InverseProblem, u: &DVector<f64>) -> Result<f64> {
    p.misfit_phi(u)
}

/// `Φ_R(u) = Φ(u) + ½‖u‖²_{Γ₀}`.
pub fn misfit_phi_r(p: &InverseProblem, u: &DVector<f64>) -> Result<f64> {
    p.misfit_phi_r(u)
}

/// Central finite-difference jacobian of `model` at `u`.
pub fn finite_difference_jacobian(model: &dyn ForwardModel, u: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
    let (d, k) = (model.input_dim(), model.output_dim());
    let mut jac = DMatrix::zeros(k, d);
    for i in 0..d {
        let mut up = u.clone();
        let mut down = u.clone();
        up[i] += step;
        down[i] -= step;
        let col = (model.eval(&up)? - model.eval(&down)?) / (2.0 * step);
        jac.set_column(i, &col);
    }
    Ok(jac)
}
