use nalgebra::{DMatrix, DVector};

use super::ForwardModel;
use crate::error::{Error, Result};

/// `G(u) = A u`.
pub fn linear_forward(a_matrix: &DMatrix<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    if a_matrix.ncols() != u.len() {
        return Err(Error::dim(format!(
            "{}x{} operator applied to a vector of length {}",
            a_matrix.nrows(),
            a_matrix.ncols(),
            u.len()
        )));
    }
    Ok(a_matrix * u)
}

#[derive(Debug, Clone)]
pub struct LinearModel {
    a: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>) -> Self {
        Self { a }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl ForwardModel for LinearModel {
    fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        linear_forward(&self.a, u)
    }

    fn jacobian(&self, _u: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.a.clone())
    }

    fn has_jacobian(&self) -> bool {
        true
    }

    fn is_affine(&self) -> bool {
        true
    }
}
