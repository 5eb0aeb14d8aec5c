//! Dense symmetric linear algebra used across the crate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues in `[-PSD_TOLERANCE, 0)` are treated as round-off and clamped.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Entrywise symmetry tolerance for matrices that are meant to be symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

pub(crate) fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Largest entrywise asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    check_square(m, what)?;
    let scale = m.amax().max(1.0);
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::InvalidArgument(format!(
            "{what} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// A symmetric positive-definite matrix together with its Cholesky factor.
///
/// All products of the form `aᵀ M⁻¹ b` go through the factorization; the
/// inverse is never formed explicitly except on request.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl SpdMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&matrix, "SPD matrix")?;
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SPD matrix entry".into()));
        }
        let matrix = symmetrize(&matrix);
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::NotSpd("Cholesky factorization failed".into()))?;
        Ok(Self { matrix, chol })
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0).expect("identity is SPD")
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Result<Self> {
        Self::new(DMatrix::identity(n, n) * scale)
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower-triangular `L` with `L Lᵀ = M`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }

    pub fn ln_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `⟨a, b⟩_M = aᵀ M⁻¹ b`.
    pub fn weighted_inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        if a.len() != self.dim() || b.len() != self.dim() {
            return Err(Error::dim(format!(
                "weighted inner product of lengths {} and {} with a {}x{} weight",
                a.len(),
                b.len(),
                self.dim(),
                self.dim()
            )));
        }
        Ok(a.dot(&self.solve(b)))
    }

    /// `‖a‖²_M = aᵀ M⁻¹ a`.
    pub fn weighted_norm_sq(&self, a: &DVector<f64>) -> Result<f64> {
        self.weighted_inner(a, a)
    }
}

/// Free-function form of [`SpdMatrix::weighted_inner`].
pub fn weighted_inner(a: &DVector<f64>, b: &DVector<f64>, w: &SpdMatrix) -> Result<f64> {
    w.weighted_inner(a, b)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Symmetric square root of a positive semi-definite matrix.
///
/// Uses the spectral decomposition `m = V Λ Vᵀ`, returning `V Λ^½ Vᵀ`.
/// Eigenvalues in `[-PSD_TOLERANCE, 0)` are clamped to zero; anything more
/// negative is rejected. Unlike a Cholesky factor the result is defined for
/// singular matrices, which arise when an ensemble nearly collapses.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m, "psd_sqrt input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if m.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, r) in roots.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*r);
    }
    Ok(symmetrize(&(scaled * v.transpose())))
}
