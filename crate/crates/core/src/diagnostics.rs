//! Ensemble-versus-truth and ensemble-versus-chain comparison metrics.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{column_covariance, column_mean, stack_columns, Ensemble, GaussianMoments};
use crate::error::{Error, Result};
use crate::models::KlFieldSpec;
use crate::samplers::ChainResult;

/// Default fraction of a chain discarded before computing moments.
pub const DEFAULT_BURN_IN: f64 = 0.2;

/// Per-coordinate weights of the squared norm used by [`spread_metric`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadWeights {
    weights: DVector<f64>,
}

impl SpreadWeights {
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("spread weights must be finite and non-negative, got {w}")));
        }
        Ok(Self { weights })
    }

    /// Euclidean (`L²`) weights.
    pub fn unit(d: usize) -> Self {
        Self {
            weights: DVector::from_element(d, 1.0),
        }
    }

    /// `H^{-2}` weights: the KL eigenvalues, in the field's mode order.
    pub fn h_minus_two(spec: &KlFieldSpec) -> Self {
        Self {
            weights: DVector::from_column_slice(spec.eigenvalues()),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::dim(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// `√((1/J) Σ_j ‖u⁽ʲ⁾ - ref‖²_w)`.
pub fn spread_metric(e: &Ensemble, ref_point: &DVector<f64>, w: &SpreadWeights) -> Result<f64> {
    check_len("reference point", ref_point.len(), e.dim())?;
    check_len("spread weights", w.dim(), e.dim())?;
    let total: f64 = e
        .particles()
        .column_iter()
        .map(|u| (u - ref_point).component_mul(&(u - ref_point)).dot(&w.weights))
        .sum();
    Ok((total / e.size() as f64).sqrt())
}

/// A collection of samples in `R^d` with `1/N` empirical moments.
pub trait Samples {
    fn sample_matrix(&self) -> Result<DMatrix<f64>>;

    fn sample_moments(&self) -> Result<GaussianMoments> {
        let m = self.sample_matrix()?;
        if m.ncols() == 0 {
            return Err(Error::InvalidArgument("no samples".into()));
        }
        Ok(GaussianMoments {
            mean: column_mean(&m),
            cov: column_covariance(&m),
        })
    }
}

impl Samples for Ensemble {
    fn sample_matrix(&self) -> Result<DMatrix<f64>> {
        Ok(self.particles().clone())
    }

    fn sample_moments(&self) -> Result<GaussianMoments> {
        Ok(self.moments())
    }
}

impl Samples for [DVector<f64>] {
    fn sample_matrix(&self) -> Result<DMatrix<f64>> {
        stack_columns(self, self.len())
    }
}

impl Samples for Vec<DVector<f64>> {
    fn sample_matrix(&self) -> Result<DMatrix<f64>> {
        stack_columns(self, self.len())
    }
}

/// `ζ_k = 1 - 𝕍(u_k | y) / 𝕍(u_k)`, unclamped.
pub fn variance_reduction(posterior_samples: &(impl Samples + ?Sized), prior_variances: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(v) = prior_variances.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidArgument(format!("prior variances must be positive, got {v}")));
    }
    let moments = posterior_samples.sample_moments()?;
    check_len("prior variances", prior_variances.len(), moments.dim())?;
    Ok(DVector::from_fn(moments.dim(), |k, _| 1.0 - moments.cov[(k, k)] / prior_variances[k]))
}

/// Euclidean mean error and Frobenius covariance error against a reference.
pub fn moment_error(e: &Ensemble, reference: &GaussianMoments) -> Result<(f64, f64)> {
    check_len("reference mean", reference.dim(), e.dim())?;
    let m = e.moments();
    Ok(((&m.mean - &reference.mean).norm(), (&m.cov - &reference.cov).norm()))
}

/// The samples left after discarding the leading `burn_in_fraction`.
pub fn post_burn_in(c: &ChainResult, burn_in_fraction: f64) -> Result<&[DVector<f64>]> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::InvalidArgument(format!("burn-in fraction must lie in [0, 1), got {burn_in_fraction}")));
    }
    let skip = (burn_in_fraction * c.samples.len() as f64).floor() as usize;
    let kept = &c.samples[skip..];
    if kept.is_empty() {
        return Err(Error::InvalidArgument("chain is empty after burn-in".into()));
    }
    Ok(kept)
}

/// Post-burn-in sample mean and `1/N` covariance of a chain.
pub fn chain_moments(c: &ChainResult, burn_in_fraction: f64) -> Result<GaussianMoments> {
    post_burn_in(c, burn_in_fraction)?.sample_moments()
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("quantile level must lie in [0, 1], got {p}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("quantile input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Per-component sample mean with an empirical central interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalInterval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean and `[(1-level)/2, (1+level)/2]` empirical quantiles of every
/// component of `samples`.
pub fn marginal_intervals(samples: &(impl Samples + ?Sized), level: f64) -> Result<Vec<MarginalInterval>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("interval level must lie in (0, 1), got {level}")));
    }
    let m = samples.sample_matrix()?;
    if m.ncols() == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let tail = 0.5 * (1.0 - level);
    m.row_iter()
        .map(|row| {
            let values: Vec<f64> = row.iter().copied().collect();
            Ok(MarginalInterval {
                mean: values.iter().sum::<f64>() / values.len() as f64,
                lower: quantile(&values, tail)?,
                upper: quantile(&values, 1.0 - tail)?,
            })
        })
        .collect()
}

pub fn marginals_csv(intervals: &[MarginalInterval]) -> String {
    let mut out = String::from("k,mean,lower,upper\n");
    for (k, m) in intervals.iter().enumerate() {
        let _ = writeln!(out, "{k},{:e},{:e},{:e}", m.mean, m.lower, m.upper);
    }
    out
}

/// One row of the spread-metric time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpreadRecord {
    pub t: f64,
    pub h_minus_two_mean: f64,
    pub h_minus_two_truth: f64,
    pub l2_mean: f64,
    pub l2_truth: f64,
}

/// Spread of `e` about its own mean and about `truth`, in both norms.
pub fn spread_record(t: f64, e: &Ensemble, truth: &DVector<f64>, h_minus_two: &SpreadWeights) -> Result<SpreadRecord> {
    let mean = e.mean();
    let unit = SpreadWeights::unit(e.dim());
    Ok(SpreadRecord {
        t,
        h_minus_two_mean: spread_metric(e, &mean, h_minus_two)?,
        h_minus_two_truth: spread_metric(e, truth, h_minus_two)?,
        l2_mean: spread_metric(e, &mean, &unit)?,
        l2_truth: spread_metric(e, truth, &unit)?,
    })
}

pub fn spread_csv(records: &[SpreadRecord]) -> String {
    let mut out = String::from("t,d_h_minus_two_mean,d_h_minus_two_truth,d_l2_mean,d_l2_truth\n");
    for r in records {
        let _ = writeln!(
            out,
            "{:e},{:e},{:e},{:e},{:e}",
            r.t, r.h_minus_two_mean, r.h_minus_two_truth, r.l2_mean, r.l2_truth
        );
    }
    out
}

pub fn zeta_csv(zeta: &DVector<f64>) -> String {
    let mut out = String::from("k,zeta\n");
    for (k, z) in zeta.iter().enumerate() {
        let _ = writeln!(out, "{k},{z:e}");
    }
    out
}
