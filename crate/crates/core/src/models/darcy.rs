//! Two-dimensional Darcy flow `-∇·(a ∇p) = f` on the unit square with
//! homogeneous Dirichlet boundary, and a Karhunen–Loève log-permeability.
//!
//! The pressure is discretised on an `N × N` cell-centred grid. Interior
//! faces carry the harmonic mean of the adjacent cell permeabilities; boundary
//! faces sit half a cell from the centre and use the cell value. The resulting
//! system is a symmetric M-matrix.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Conj, Mat, Par, Side};
use nalgebra::{DMatrix, DVector};

use super::ForwardModel;
use crate::error::{Error, Result};

/// Truncated KL expansion `log a(x) = Σ_ℓ u_ℓ √λ_ℓ cos(π⟨ℓ, x⟩)` with
/// `λ_ℓ = (π²|ℓ|² + τ²)^{-α}`.
#[derive(Debug, Clone, PartialEq)]
pub struct KlFieldSpec {
    tau: f64,
    alpha: f64,
    indices: Vec<[i64; 2]>,
    eigenvalues: Vec<f64>,
}

impl KlFieldSpec {
    /// The `d` indices `ℓ ∈ Z²₊` with the largest eigenvalues, ties broken
    /// lexicographically. `include_constant_mode` controls whether `ℓ = (0, 0)`
    /// is admissible.
    pub fn leading(tau: f64, alpha: f64, d: usize, include_constant_mode: bool) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("KL expansion needs d >= 1".into()));
        }
        let bound = (d as f64).sqrt().ceil() as i64 + 2;
        let mut candidates: Vec<[i64; 2]> = (0..=bound)
            .flat_map(|a| (0..=bound).map(move |b| [a, b]))
            .filter(|l| include_constant_mode || *l != [0, 0])
            .collect();
        candidates.sort_by_key(|l| (l[0] * l[0] + l[1] * l[1], l[0], l[1]));
        candidates.truncate(d);
        Self::with_indices(tau, alpha, candidates)
    }

    /// Uses the given indices in the given order.
    pub fn with_indices(tau: f64, alpha: f64, indices: Vec<[i64; 2]>) -> Result<Self> {
        if !(tau > 0.0 && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "KL field needs tau > 0 and alpha > 0, got tau={tau}, alpha={alpha}"
            )));
        }
        let eigenvalues = indices.iter().map(|l| eigenvalue(tau, alpha, *l)).collect();
        Ok(Self {
            tau,
            alpha,
            indices,
            eigenvalues,
        })
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn indices(&self) -> &[[i64; 2]] {
        &self.indices
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `√λ_ℓ φ_ℓ(x)` for every mode.
    pub fn scaled_modes(&self, x: [f64; 2]) -> impl Iterator<Item = f64> + '_ {
        self.indices
            .iter()
            .zip(&self.eigenvalues)
            .map(move |(l, lam)| lam.sqrt() * (PI * (l[0] as f64 * x[0] + l[1] as f64 * x[1])).cos())
    }
}

fn eigenvalue(tau: f64, alpha: f64, l: [i64; 2]) -> f64 {
    let norm_sq = (l[0] * l[0] + l[1] * l[1]) as f64;
    (PI * PI * norm_sq + tau * tau).powf(-alpha)
}

/// Value of the truncated series at `x`.
pub fn kl_log_permeability(spec: &KlFieldSpec, u: &DVector<f64>, x: [f64; 2]) -> Result<f64> {
    if u.len() != spec.dim() {
        return Err(Error::dim(format!(
            "KL coefficients of length {}, expansion has {} modes",
            u.len(),
            spec.dim()
        )));
    }
    Ok(spec.scaled_modes(x).zip(u.iter()).map(|(m, c)| m * c).sum())
}

/// Cell-centred scalar field on an `n × n` grid, `value(i, j)` at
/// `((i + ½)/n, (j + ½)/n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    n: usize,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::dim(format!("{} values for a {n}x{n} grid", values.len())));
        }
        Ok(Self { n, values })
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self {
            n,
            values: vec![value; n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn([f64; 2]) -> f64) -> Self {
        let h = 1.0 / n as f64;
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]));
            }
        }
        Self { n, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear interpolation, treating the boundary `∂D` as zero (the
    /// Dirichlet value), so points between the outer cell centres and the
    /// wall interpolate towards zero.
    pub fn interpolate_dirichlet(&self, x: [f64; 2]) -> f64 {
        let n = self.n;
        let h = 1.0 / n as f64;
        let node = |m: usize| -> f64 {
            match m {
                0 => 0.0,
                m if m == n + 1 => 1.0,
                m => (m as f64 - 0.5) * h,
            }
        };
        let locate = |t: f64| -> (usize, f64) {
            let m = if t < 0.5 * h {
                0
            } else {
                ((t / h + 0.5).floor() as usize).min(n)
            };
            let (a, b) = (node(m), node(m + 1));
            (m, ((t - a) / (b - a)).clamp(0.0, 1.0))
        };
        let value = |mx: usize, my: usize| -> f64 {
            if mx == 0 || my == 0 || mx == n + 1 || my == n + 1 {
                0.0
            } else {
                self.get(mx - 1, my - 1)
            }
        };
        let (mx, sx) = locate(x[0]);
        let (my, sy) = locate(x[1]);
        (1.0 - sx) * (1.0 - sy) * value(mx, my)
            + sx * (1.0 - sy) * value(mx + 1, my)
            + (1.0 - sx) * sy * value(mx, my + 1)
            + sx * sy * value(mx + 1, my + 1)
    }

    /// Row-major CSV with header `i,j,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,value\n");
        for i in 0..self.n {
            for j in 0..self.n {
                let _ = writeln!(out, "{i},{j},{:e}", self.get(i, j));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceTerm {
    Constant(f64),
    Field(ScalarGrid),
}

#[derive(Debug, Clone)]
pub struct DarcyConfig {
    pub grid_n: usize,
    pub source: SourceTerm,
    pub observation_points: Vec<[f64; 2]>,
    pub kl: KlFieldSpec,
}

impl DarcyConfig {
    /// Unit source and `s × s` lattice of observation points at
    /// `((a + 1)/(s + 1), (b + 1)/(s + 1))`.
    pub fn new(grid_n: usize, lattice_side: usize, kl: KlFieldSpec) -> Result<Self> {
        let cfg = Self {
            grid_n,
            source: SourceTerm::Constant(1.0),
            observation_points: observation_lattice(lattice_side),
            kl,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_n < 8 {
            return Err(Error::InvalidArgument(format!("grid_n must be >= 8, got {}", self.grid_n)));
        }
        if let Some(p) = self
            .observation_points
            .iter()
            .find(|p| !p.iter().all(|&c| c > 0.0 && c < 1.0))
        {
            return Err(Error::InvalidArgument(format!(
                "observation point ({}, {}) is not strictly inside the unit square",
                p[0], p[1]
            )));
        }
        if let SourceTerm::Field(f) = &self.source {
            if f.n() != self.grid_n {
                return Err(Error::dim(format!("source grid is {0}x{0}, expected {1}x{1}", f.n(), self.grid_n)));
            }
        }
        Ok(())
    }

    fn source_value(&self, i: usize, j: usize) -> f64 {
        match &self.source {
            SourceTerm::Constant(c) => *c,
            SourceTerm::Field(f) => f.get(i, j),
        }
    }
}

/// `side × side` uniform interior lattice.
pub fn observation_lattice(side: usize) -> Vec<[f64; 2]> {
    let s = (side + 1) as f64;
    (0..side)
        .flat_map(|a| (0..side).map(move |b| [(a + 1) as f64 / s, (b + 1) as f64 / s]))
        .collect()
}

/// Face transmissibilities of the 5-point operator.
struct Stencil {
    n: usize,
    /// `east[i*n + j]`: face between `(i, j)` and `(i + 1, j)`, for `i < n - 1`.
    east: Vec<f64>,
    /// `north[i*n + j]`: face between `(i, j)` and `(i, j + 1)`, for `j < n - 1`.
    north: Vec<f64>,
    diag: Vec<f64>,
}

impl Stencil {
    fn assemble(log_a: &ScalarGrid) -> Result<Self> {
        let n = log_a.n();
        let a: Vec<f64> = log_a.values().iter().map(|v| v.exp()).collect();
        if let Some(bad) = a.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::NonFinite(format!("permeability value {bad}")));
        }
        let harmonic = |x: f64, y: f64| 2.0 * x * y / (x + y);
        let mut east = vec![0.0; n * n];
        let mut north = vec![0.0; n * n];
        let mut diag = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                if i + 1 < n {
                    east[k] = harmonic(a[k], a[k + n]);
                }
                if j + 1 < n {
                    north[k] = harmonic(a[k], a[k + 1]);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let boundary = 2.0 * a[k];
                let mut s = 0.0;
                s += if i + 1 < n { east[k] } else { boundary };
                s += if i > 0 { east[k - n] } else { boundary };
                s += if j + 1 < n { north[k] } else { boundary };
                s += if j > 0 { north[k - 1] } else { boundary };
                diag[k] = s;
            }
        }
        Ok(Self { n, east, north, diag })
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let mut v = self.diag[k] * x[k];
                if i + 1 < n {
                    v -= self.east[k] * x[k + n];
                }
                if i > 0 {
                    v -= self.east[k - n] * x[k - n];
                }
                if j + 1 < n {
                    v -= self.north[k] * x[k + 1];
                }
                if j > 0 {
                    v -= self.north[k - 1] * x[k - 1];
                }
                out[k] = v;
            }
        }
    }
}

/// Sparse Cholesky solver for the 5-point operator on an `n × n` grid. The
/// sparsity pattern depends only on `n`, so one symbolic factorisation
/// serves every permeability.
#[derive(Clone)]
struct SparseFactor {
    n: usize,
    pattern: SymbolicSparseColMat<usize>,
    symbolic: Arc<SymbolicCholesky<usize>>,
}

impl std::fmt::Debug for SparseFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseFactor").field("n", &self.n).finish_non_exhaustive()
    }
}

impl SparseFactor {
    fn new(n: usize) -> Result<Self> {
        let m = n * n;
        let mut col_ptr = Vec::with_capacity(m + 1);
        let mut row_idx = Vec::with_capacity(3 * m);
        col_ptr.push(0);
        for k in 0..m {
            row_idx.push(k);
            if k % n + 1 < n {
                row_idx.push(k + 1);
            }
            if k + n < m {
                row_idx.push(k + n);
            }
            col_ptr.push(row_idx.len());
        }
        let pattern = SymbolicSparseColMat::new_checked(m, m, col_ptr, None, row_idx);
        let symbolic = factorize_symbolic_cholesky(pattern.as_ref(), Side::Lower, SymmetricOrdering::Amd, Default::default())
            .map_err(|e| Error::LinearSolve(format!("symbolic factorisation failed: {e:?}")))?;
        Ok(Self {
            n,
            pattern,
            symbolic: Arc::new(symbolic),
        })
    }

    /// Lower-triangle values in the column order of `pattern`.
    fn values(&self, stencil: &Stencil) -> Vec<f64> {
        let (n, m) = (self.n, self.n * self.n);
        let mut values = Vec::with_capacity(self.pattern.row_idx().len());
        for k in 0..m {
            values.push(stencil.diag[k]);
            if k % n + 1 < n {
                values.push(-stencil.north[k]);
            }
            if k + n < m {
                values.push(-stencil.east[k]);
            }
        }
        values
    }

    fn solve(&self, stencil: &Stencil, rhs: &[f64]) -> Result<Vec<f64>> {
        let values = self.values(stencil);
        let a = SparseColMatRef::new(self.pattern.as_ref(), &values);
        let mut l = vec![0.0; self.symbolic.len_val()];
        let scratch = self
            .symbolic
            .factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default())
            .or(self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        let mut buf = MemBuffer::new(scratch);
        let llt = self
            .symbolic
            .factorize_numeric_llt::<f64>(&mut l, a, Side::Lower, Default::default(), Par::Seq, MemStack::new(&mut buf), Default::default())
            .map_err(|e| Error::LinearSolve(format!("sparse Cholesky failed: {e:?}")))?;
        let mut x = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        llt.solve_in_place_with_conj(Conj::No, x.as_mut(), Par::Seq, MemStack::new(&mut buf));
        Ok(x.col(0).iter().copied().collect())
    }
}

/// Solves the discrete Darcy problem for the given cell log-permeabilities.
pub fn darcy_solve(cfg: &DarcyConfig, log_a: &ScalarGrid) -> Result<ScalarGrid> {
    solve_with(&SparseFactor::new(cfg.grid_n)?, cfg, log_a)
}

fn solve_with(factor: &SparseFactor, cfg: &DarcyConfig, log_a: &ScalarGrid) -> Result<ScalarGrid> {
    let n = cfg.grid_n;
    if log_a.n() != n {
        return Err(Error::dim(format!("log-permeability grid is {0}x{0}, expected {n}x{n}", log_a.n())));
    }
    if log_a.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-permeability".into()));
    }
    let stencil = Stencil::assemble(log_a)?;
    let h2 = 1.0 / (n * n) as f64;
    let mut rhs = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            rhs.push(cfg.source_value(i, j) * h2);
        }
    }
    let p = factor.solve(&stencil, &rhs)?;
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve("non-finite pressure".into()));
    }
    ScalarGrid::new(n, p)
}

/// Relative residual `‖A p - b‖ / ‖b‖` of a computed pressure.
pub fn darcy_residual(cfg: &DarcyConfig, log_a: &ScalarGrid, p: &ScalarGrid) -> Result<f64> {
    let n = cfg.grid_n;
    let stencil = Stencil::assemble(log_a)?;
    let mut ap = vec![0.0; n * n];
    stencil.apply(p.values(), &mut ap);
    let h2 = 1.0 / (n * n) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in 0..n {
            let b = cfg.source_value(i, j) * h2;
            num += (ap[i * n + j] - b).powi(2);
            den += b * b;
        }
    }
    Ok(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() })
}

/// Darcy forward map: KL coefficients to pointwise pressures.
#[derive(Debug, Clone)]
pub struct DarcyModel {
    cfg: DarcyConfig,
    factor: SparseFactor,
    /// `N² × d`: scaled KL modes evaluated at the cell centres.
    basis: DMatrix<f64>,
}

impl DarcyModel {
    pub fn new(cfg: DarcyConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.grid_n;
        let d = cfg.kl.dim();
        let h = 1.0 / n as f64;
        let mut basis = DMatrix::zeros(n * n, d);
        for i in 0..n {
            for j in 0..n {
                let x = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                for (m, v) in cfg.kl.scaled_modes(x).enumerate() {
                    basis[(i * n + j, m)] = v;
                }
            }
        }
        let factor = SparseFactor::new(n)?;
        Ok(Self { cfg, factor, basis })
    }

    pub fn config(&self) -> &DarcyConfig {
        &self.cfg
    }

    pub fn log_permeability(&self, u: &DVector<f64>) -> Result<ScalarGrid> {
        if u.len() != self.cfg.kl.dim() {
            return Err(Error::dim(format!(
                "KL coefficients of length {}, expansion has {} modes",
                u.len(),
                self.cfg.kl.dim()
            )));
        }
        let values = &self.basis * u;
        ScalarGrid::new(self.cfg.grid_n, values.as_slice().to_vec())
    }

    pub fn pressure(&self, u: &DVector<f64>) -> Result<ScalarGrid> {
        solve_with(&self.factor, &self.cfg, &self.log_permeability(u)?)
    }
}

impl ForwardModel for DarcyModel {
    fn input_dim(&self) -> usize {
        self.cfg.kl.dim()
    }

    fn output_dim(&self) -> usize {
        self.cfg.observation_points.len()
    }

    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.pressure(u)?;
        Ok(DVector::from_iterator(
            self.output_dim(),
            self.cfg.observation_points.iter().map(|&x| p.interpolate_dirichlet(x)),
        ))
    }
}

/// Free-function form of [`DarcyModel::eval`]; rebuilds the KL basis.
pub fn darcy_forward(cfg: &DarcyConfig, u: &DVector<f64>) -> Result<DVector<f64>> {
    DarcyModel::new(cfg.clone())?.eval(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    /// Fourier series of `-Δp = 1`, `p|∂D = 0` on the unit square.
    fn poisson_series(x: f64, y: f64) -> f64 {
        let mut s = 0.0;
        for m in (1..200).step_by(2) {
            for n in (1..200).step_by(2) {
                let (mf, nf) = (m as f64, n as f64);
                s += 16.0 / (PI.powi(4) * mf * nf * (mf * mf + nf * nf))
                    * (mf * PI * x).sin()
                    * (nf * PI * y).sin();
            }
        }
        s
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        let mut acc = [0.0f64; 4];
        let ca = a.chunks_exact(4);
        let cb = b.chunks_exact(4);
        let (ra, rb) = (ca.remainder(), cb.remainder());
        for (x, y) in ca.zip(cb) {
            acc[0] += x[0] * y[0];
            acc[1] += x[1] * y[1];
            acc[2] += x[2] * y[2];
            acc[3] += x[3] * y[3];
        }
        let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for (x, y) in ra.iter().zip(rb) {
            s += x * y;
        }
        s
    }

    /// Jacobi-preconditioned conjugate gradient to relative residual `tol`.
    fn conjugate_gradient(stencil: &Stencil, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        let m = b.len();
        let b_norm = dot(b, b).sqrt();
        let mut x = vec![0.0; m];
        if b_norm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&stencil.diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; m];
        let mut rz = dot(&r, &z);
        let max_iter = 20 * m;
        for _ in 0..max_iter {
            stencil.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for k in 0..m {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            if dot(&r, &r).sqrt() <= tol * b_norm {
                return Ok(x);
            }
            for k in 0..m {
                z[k] = r[k] / stencil.diag[k];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..m {
                p[k] = z[k] + beta * p[k];
            }
        }
        Err(Error::LinearSolve(format!("CG did not reach relative residual {tol:e} in {max_iter} iterations")))
    }

    fn spec(d: usize) -> KlFieldSpec {
        KlFieldSpec::leading(3.0, 2.0, d, true).unwrap()
    }

    #[test]
    fn series_oracle_center_value() {
        assert!((poisson_series(0.5, 0.5) - 0.07367).abs() < 1e-5);
    }

    #[test]
    fn kl_examples() {
        let s = spec(16);
        assert_eq!(kl_log_permeability(&s, &DVector::zeros(16), [0.3, 0.8]).unwrap(), 0.0);
        let single = KlFieldSpec::with_indices(3.0, 2.0, vec![[0, 0]]).unwrap();
        assert!((single.eigenvalues()[0] - 1.0 / 81.0).abs() < 1e-16);
        let u = DVector::from_element(1, 2.7);
        let v = kl_log_permeability(&single, &u, [0.1, 0.9]).unwrap();
        assert!((v - 2.7 / 9.0).abs() < 1e-15);
        let e1 = KlFieldSpec::with_indices(3.0, 2.0, vec![[1, 0]]).unwrap();
        for y in [0.0, 0.3, 0.77] {
            let phi: Vec<f64> = e1.scaled_modes([1.0, y]).collect();
            assert!((phi[0] / e1.eigenvalues()[0].sqrt() + 1.0).abs() < 1e-15);
        }
        assert!(kl_log_permeability(&s, &DVector::zeros(3), [0.5, 0.5]).is_err());
    }

    #[test]
    fn kl_ordering() {
        let s = spec(64);
        assert_eq!(s.indices()[0], [0, 0]);
        assert_eq!(&s.indices()[1..3], &[[0, 1], [1, 0]]);
        assert!(s.eigenvalues().windows(2).all(|w| w[0] >= w[1] && w[1] > 0.0));
        let no_const = KlFieldSpec::leading(3.0, 2.0, 4, false).unwrap();
        assert_eq!(no_const.indices()[0], [0, 1]);
    }

    #[test]
    fn kl_is_linear() {
        let s = spec(10);
        let a = RngStream::new(1).standard_normals(10);
        let b = RngStream::new(2).standard_normals(10);
        let x = [0.31, 0.64];
        let lhs = kl_log_permeability(&s, &(&a * 2.0 - &b * 0.5), x).unwrap();
        let rhs = 2.0 * kl_log_permeability(&s, &a, x).unwrap() - 0.5 * kl_log_permeability(&s, &b, x).unwrap();
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn poisson_center_value() {
        let cfg = DarcyConfig::new(64, 3, spec(4)).unwrap();
        let p = darcy_solve(&cfg, &ScalarGrid::constant(64, 0.0)).unwrap();
        let centre = p.interpolate_dirichlet([0.5, 0.5]);
        assert!((centre - 0.07367).abs() < 0.002, "centre = {centre}");
    }

    #[test]
    fn zero_source_and_scaling() {
        let mut cfg = DarcyConfig::new(16, 2, spec(4)).unwrap();
        let log_a = ScalarGrid::from_fn(16, |x| (3.0 * x[0]).sin() - x[1]);
        let p1 = darcy_solve(&cfg, &log_a).unwrap();
        let p2 = darcy_solve(&cfg, &log_a.map(|v| v + 2f64.ln())).unwrap();
        for (a, b) in p1.values().iter().zip(p2.values()) {
            assert!((a - 2.0 * b).abs() < 1e-14 * a.abs().max(1e-300) + 1e-17);
        }
        cfg.source = SourceTerm::Constant(0.0);
        let z = darcy_solve(&cfg, &log_a).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_and_maximum_principle() {
        for (n, seed) in [(16usize, 3u64), (40, 4)] {
            let cfg = DarcyConfig::new(n, 4, spec(20)).unwrap();
            let model = DarcyModel::new(cfg.clone()).unwrap();
            let u = RngStream::new(seed).standard_normals(20) * 10.0;
            let log_a = model.log_permeability(&u).unwrap();
            let p = darcy_solve(&cfg, &log_a).unwrap();
            assert!(darcy_residual(&cfg, &log_a, &p).unwrap() <= 1e-10);
            assert!(p.values().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn cg_matches_direct() {
        for n in [24usize, 64] {
            let cfg = DarcyConfig::new(n, 3, spec(8)).unwrap();
            let model = DarcyModel::new(cfg.clone()).unwrap();
            let u = RngStream::new(8).standard_normals(8) * 5.0;
            let log_a = model.log_permeability(&u).unwrap();
            let stencil = Stencil::assemble(&log_a).unwrap();
            let direct = darcy_solve(&cfg, &log_a).unwrap();
            let rhs = vec![1.0 / (n * n) as f64; n * n];
            let cg = conjugate_gradient(&stencil, &rhs, 1e-12).unwrap();
            let err = direct.values().iter().zip(&cg).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = cg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err <= 1e-9 * scale);
        }
    }

    #[test]
    fn forward_at_zero_is_poisson_solution() {
        let cfg = DarcyConfig::new(32, 3, spec(6)).unwrap();
        let g = darcy_forward(&cfg, &DVector::zeros(6)).unwrap();
        let p = darcy_solve(&cfg, &ScalarGrid::constant(32, 0.0)).unwrap();
        for (v, x) in g.iter().zip(&cfg.observation_points) {
            assert_eq!(*v, p.interpolate_dirichlet(*x));
        }
        let u = RngStream::new(5).standard_normals(6);
        assert_eq!(darcy_forward(&cfg, &u).unwrap(), darcy_forward(&cfg, &u).unwrap());
    }

    #[test]
    fn invalid_configs() {
        assert!(DarcyConfig::new(4, 2, spec(2)).is_err());
        let mut cfg = DarcyConfig::new(16, 2, spec(2)).unwrap();
        cfg.observation_points.push([0.0, 0.5]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn interpolation_reproduces_cell_values() {
        let g = ScalarGrid::from_fn(8, |x| x[0] + 2.0 * x[1]);
        let h = 1.0 / 8.0;
        for i in 0..8 {
            for j in 0..8 {
                let x = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                assert!((g.interpolate_dirichlet(x) - g.get(i, j)).abs() < 1e-14);
            }
        }
        assert!(g.interpolate_dirichlet([1e-9, 0.5]).abs() < 1e-6);
        let csv = g.to_csv();
        assert!(csv.starts_with("i,j,value\n0,0,"));
        assert_eq!(csv.lines().count(), 65);
    }
}
