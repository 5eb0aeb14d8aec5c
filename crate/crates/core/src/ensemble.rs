//! Particle ensembles and their empirical statistics.
//!
//! Covariances use the `1/J` normalizer throughout, never `1/(J-1)`. The
//! mean-field moment checks compare against this convention, so switching it
//! would introduce an `O(1/J)` bias in every comparison.
//!
//! Reductions over particles are pairwise with a fixed split, so every
//! statistic is bitwise reproducible for a given particle order.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, psd_sqrt, symmetrize};
use crate::rng::RngStream;

const PAIRWISE_BLOCK: usize = 32;

fn pairwise<T>(range: Range<usize>, leaf: &impl Fn(Range<usize>) -> T, add: &impl Fn(T, T) -> T) -> T {
    if range.len() <= PAIRWISE_BLOCK {
        return leaf(range);
    }
    let mid = range.start + range.len() / 2;
    let left = pairwise(range.start..mid, leaf, add);
    let right = pairwise(mid..range.end, leaf, add);
    add(left, right)
}

/// Column mean of a `d × n` sample matrix.
pub(crate) fn column_mean(samples: &DMatrix<f64>) -> DVector<f64> {
    let n = samples.ncols();
    let d = samples.nrows();
    if n == 0 {
        return DVector::zeros(d);
    }
    let sum = pairwise(
        0..n,
        &|r: Range<usize>| {
            let mut acc = DVector::zeros(d);
            for j in r {
                acc += samples.column(j);
            }
            acc
        },
        &|a, b| a + b,
    );
    sum / n as f64
}

/// `(1/n) Σ (x_k - x̄)(y_k - ȳ)ᵀ` for column samples `x` (`p × n`) and `y` (`q × n`).
pub(crate) fn column_cross_covariance(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    debug_assert_eq!(n, y.ncols());
    if n == 0 {
        return DMatrix::zeros(x.nrows(), y.nrows());
    }
    let dx = centered(x);
    let dy = centered(y);
    let sum = pairwise(
        0..n,
        &|r: Range<usize>| {
            let a = dx.columns(r.start, r.len());
            let b = dy.columns(r.start, r.len());
            a * b.transpose()
        },
        &|a, b| a + b,
    );
    sum / n as f64
}

pub(crate) fn column_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&column_cross_covariance(x, x))
}

/// Subtracts the column mean from every column.
pub(crate) fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_mean(x);
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        col -= &mean;
    }
    out
}

/// `J` particles in `R^d`, stored as the columns of a `d × J` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(particles: DMatrix<f64>) -> Result<Self> {
        if particles.ncols() < 2 {
            return Err(Error::TooFewParticles(particles.ncols()));
        }
        if particles.nrows() == 0 {
            return Err(Error::dim("particles must have dimension d >= 1"));
        }
        if particles.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ensemble particle entry".into()));
        }
        Ok(Self { particles })
    }

    pub fn from_vectors(particles: &[DVector<f64>]) -> Result<Self> {
        let d = particles.first().map_or(0, |p| p.len());
        if let Some(bad) = particles.iter().find(|p| p.len() != d) {
            return Err(Error::dim(format!(
                "particle of length {} in an ensemble of dimension {d}",
                bad.len()
            )));
        }
        Self::new(DMatrix::from_fn(d, particles.len(), |i, j| particles[j][i]))
    }

    /// `J` i.i.d. draws from a Gaussian, one `(j, 0)` sub-stream per particle.
    pub fn sample_gaussian(g: &GaussianMoments, size: usize, stream: RngStream) -> Result<Self> {
        let root = psd_sqrt(&g.cov)?;
        let d = g.dim();
        let mut particles = DMatrix::zeros(d, size);
        for j in 0..size {
            let z = stream.stream(j as u64, 0).standard_normals(d);
            let u = &g.mean + &root * z;
            particles.set_column(j, &u);
        }
        Self::new(particles)
    }

    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }

    pub fn size(&self) -> usize {
        self.particles.ncols()
    }

    pub fn particle(&self, j: usize) -> DVectorView<'_, f64> {
        self.particles.column(j)
    }

    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.particles
    }

    pub fn to_vectors(&self) -> Vec<DVector<f64>> {
        self.particles.column_iter().map(|c| c.into_owned()).collect()
    }

    pub fn mean(&self) -> DVector<f64> {
        empirical_mean(self)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        empirical_covariance(self)
    }

    pub fn moments(&self) -> GaussianMoments {
        GaussianMoments {
            mean: self.mean(),
            cov: self.covariance(),
        }
    }

    /// Applies `u ↦ f(u)` to each particle.
    pub fn map(&self, mut f: impl FnMut(DVectorView<'_, f64>) -> DVector<f64>) -> Result<Self> {
        let cols: Vec<DVector<f64>> = self.particles.column_iter().map(&mut f).collect();
        Self::from_vectors(&cols)
    }
}

/// `(1/J) Σ_j u⁽ʲ⁾`.
pub fn empirical_mean(e: &Ensemble) -> DVector<f64> {
    column_mean(&e.particles)
}

/// `(1/J) Σ_k (u⁽ᵏ⁾ - ū)(u⁽ᵏ⁾ - ū)ᵀ`.
pub fn empirical_covariance(e: &Ensemble) -> DMatrix<f64> {
    column_covariance(&e.particles)
}

/// `(1/J) Σ_k (u⁽ᵏ⁾ - ū)(G(u⁽ᵏ⁾) - Ḡ)ᵀ`, a `d × K` matrix.
pub fn cross_covariance(e: &Ensemble, g_values: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let g = stack_columns(g_values, e.size())?;
    Ok(column_cross_covariance(&e.particles, &g))
}

/// Stacks `J` equal-length vectors as the columns of a matrix.
pub(crate) fn stack_columns(values: &[DVector<f64>], expected: usize) -> Result<DMatrix<f64>> {
    if values.len() != expected {
        return Err(Error::dim(format!(
            "expected {expected} vectors, got {}",
            values.len()
        )));
    }
    let k = values.first().map_or(0, |v| v.len());
    if values.iter().any(|v| v.len() != k) {
        return Err(Error::dim("vectors of unequal length"));
    }
    Ok(DMatrix::from_fn(k, values.len(), |i, j| values[j][i]))
}

/// A mean vector and a symmetric positive semi-definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        linalg::check_square(&cov, "covariance")?;
        if cov.nrows() != mean.len() {
            return Err(Error::dim(format!(
                "mean of length {} with a {}x{} covariance",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gaussian moments".into()));
        }
        let asym = linalg::asymmetry(&cov);
        if asym > linalg::SYMMETRY_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "covariance asymmetry {asym:e} exceeds tolerance"
            )));
        }
        let min = linalg::min_eigenvalue(&cov);
        if min < -linalg::PSD_TOLERANCE {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
        Ok(Self { mean, cov })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `mean + psd_sqrt(cov) z` with `z` the first `d` standard normals of `stream`.
pub fn gaussian_sample(g: &GaussianMoments, stream: &RngStream) -> Result<DVector<f64>> {
    let root = psd_sqrt(&g.cov)?;
    let z = stream.standard_normals(g.dim());
    Ok(&g.mean + root * z)
}

/// Repeated draws from one Gaussian, reusing the square root.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    root: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(g: &GaussianMoments) -> Result<Self> {
        Ok(Self {
            mean: g.mean.clone(),
            root: psd_sqrt(&g.cov)?,
        })
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(rng));
        &self.mean + &self.root * z
    }
}

/// One coordinate of a product initial distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Normal { mean, std } if mean.is_finite() && std >= 0.0 && std.is_finite() => Ok(()),
            Marginal::Uniform { low, high } if low.is_finite() && high.is_finite() && low < high => Ok(()),
            m => Err(Error::InvalidArgument(format!("invalid marginal {m:?}"))),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Marginal::Normal { std, .. } => std * std,
            Marginal::Uniform { low, high } => (high - low).powi(2) / 12.0,
        }
    }

    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Normal { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
            Marginal::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }
}

impl Ensemble {
    /// `J` draws with independent coordinates, one `(j, 0)` sub-stream per particle.
    pub fn sample_product(marginals: &[Marginal], size: usize, stream: RngStream) -> Result<Self> {
        for m in marginals {
            m.validate()?;
        }
        let d = marginals.len();
        let mut particles = DMatrix::zeros(d, size);
        for j in 0..size {
            let mut rng = stream.stream(j as u64, 0).rng();
            for (i, m) in marginals.iter().enumerate() {
                particles[(i, j)] = m.sample(&mut rng);
            }
        }
        Self::new(particles)
    }
}
