//! Two-point boundary value problem `-(e^{u₁} p')' = 1` on `[0, 1]`,
//! `p(0) = 0`, `p(1) = u₂`, observed at two interior points.

use nalgebra::{DMatrix, DVector};

use super::ForwardModel;
use crate::error::{Error, Result};

/// Closed-form pressure `p(x) = u₂ x + e^{-u₁}(x/2 - x²/2)`.
pub fn elliptic_pressure(u: &DVector<f64>, x: f64) -> f64 {
    u[1] * x + (-u[0]).exp() * (x / 2.0 - x * x / 2.0)
}

/// `(p(x₁), p(x₂))` with the default observation points `0.25` and `0.75`.
pub fn elliptic_forward(u: &DVector<f64>) -> DVector<f64> {
    EllipticModel::default().output(u)
}

#[derive(Debug, Clone)]
pub struct EllipticModel {
    points: [f64; 2],
}

impl Default for EllipticModel {
    fn default() -> Self {
        Self { points: [0.25, 0.75] }
    }
}

impl EllipticModel {
    pub fn new(x1: f64, x2: f64) -> Result<Self> {
        for x in [x1, x2] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidArgument(format!("observation point {x} outside [0, 1]")));
            }
        }
        Ok(Self { points: [x1, x2] })
    }

    pub fn points(&self) -> [f64; 2] {
        self.points
    }

    fn output(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(2, self.points.iter().map(|&x| elliptic_pressure(u, x)))
    }
}

impl ForwardModel for EllipticModel {
    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        2
    }

    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != 2 {
            return Err(Error::dim(format!("elliptic model takes 2 parameters, got {}", u.len())));
        }
        Ok(self.output(u))
    }

    fn jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        if u.len() != 2 {
            return Err(Error::dim(format!("elliptic model takes 2 parameters, got {}", u.len())));
        }
        let decay = (-u[0]).exp();
        Ok(DMatrix::from_fn(2, 2, |i, j| {
            let x = self.points[i];
            if j == 0 {
                -decay * (x / 2.0 - x * x / 2.0)
            } else {
                x
            }
        }))
    }

    fn has_jacobian(&self) -> bool {
        true
    }
}
