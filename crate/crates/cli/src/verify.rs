//! The `verify-moments` command: an EKS particle run on a linear problem
//! checked against the moment ODE and its closed-form solution.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use eks_core::meanfield::{eks_moment_exact, integrate_moments, linear_posterior, EksMoments, MomentState};
use eks_core::samplers::SamplerDriver;
use eks_core::RngStream;

use crate::config::{ExperimentConfig, InitSpec, SamplerSpec, VerifySpec};
use crate::error::CliError;
use crate::output::OutputDir;

/// Errors at one time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    pub particle_mean_err: f64,
    pub particle_cov_err: f64,
    pub mean_bound: f64,
    pub cov_bound: f64,
    pub ode_mean_err: f64,
    pub ode_cov_err: f64,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub rows: Vec<MomentRow>,
    pub ensemble_size: usize,
    /// Description of the worst violation, if any.
    pub failure: Option<String>,
    pub warnings: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

fn initial_moments(cfg: &ExperimentConfig, d: usize, gamma0: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>), CliError> {
    match cfg.init.as_ref() {
        Some(InitSpec::Gaussian { mean, cov }) => Ok((DVector::from_column_slice(mean), cov.resolve(d, d, "init.cov")?)),
        Some(InitSpec::Prior) => Ok((DVector::zeros(d), gamma0.clone())),
        _ => Err(CliError::config("init", "verify-moments needs a Gaussian or prior initial distribution")),
    }
}

/// Compares particle, ODE and closed-form moments at every particle step.
pub fn verify_moments(cfg: &ExperimentConfig, out_dir: &Path) -> Result<VerifyReport, CliError> {
    if !matches!(cfg.sampler, SamplerSpec::Eks(_)) {
        return Err(CliError::config("sampler", "verify-moments runs the eks sampler"));
    }
    let spec = cfg.verify.clone().unwrap_or_default();
    let built = cfg.build_problem()?;
    let a = built
        .linear
        .as_ref()
        .ok_or_else(|| CliError::config("problem", "verify-moments needs a linear problem"))?;
    let p = &built.problem;
    let post = linear_posterior(a, p.gamma(), p.gamma0(), p.y())?;
    let (m0, c0) = initial_moments(cfg, p.input_dim(), p.gamma0().matrix())?;

    let (kind, sde) = cfg.sampler.particle_kind(p)?.expect("eks is a particle method");
    let init = cfg.initial_ensemble(p)?;
    let j = init.size();
    let mut driver = SamplerDriver::new(p, kind, sde, init, RngStream::new(cfg.seed))?;
    let rhs = EksMoments(&post);
    let mut ode = MomentState::new(m0.clone(), c0.clone(), 0.0);
    let mut rows = Vec::new();
    loop {
        let s = driver.state();
        if s.t > ode.t {
            ode = integrate_moments(&rhs, &ode, s.t, spec.ode_dt)?.pop().expect("trajectory is non-empty");
        }
        let exact = eks_moment_exact(s.t, &m0, &c0, &post)?;
        let particle = s.ensemble.moments();
        let tr = exact.cov.trace();
        let fro2 = exact.cov.norm_squared();
        rows.push(MomentRow {
            t: s.t,
            particle_mean_err: (&particle.mean - &exact.mean).norm(),
            particle_cov_err: (&particle.cov - &exact.cov).norm(),
            mean_bound: spec.sigmas * (tr / j as f64).sqrt(),
            cov_bound: spec.sigmas * ((fro2 + tr * tr) / j as f64).sqrt(),
            ode_mean_err: (&ode.mean - &exact.mean).norm(),
            ode_cov_err: (&ode.cov - &exact.cov).norm(),
        });
        if driver.step()?.is_none() {
            break;
        }
    }
    let mut out = OutputDir::new(out_dir);
    out.write("moment_compare.csv", &compare_csv(&rows))?;
    Ok(judge(rows, j, &spec))
}

fn compare_csv(rows: &[MomentRow]) -> String {
    let mut text = String::from("t,particle_mean_err,particle_cov_err,mean_bound,cov_bound,ode_mean_err,ode_cov_err\n");
    for r in rows {
        let _ = writeln!(
            text,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.t, r.particle_mean_err, r.particle_cov_err, r.mean_bound, r.cov_bound, r.ode_mean_err, r.ode_cov_err
        );
    }
    text
}

/// Ratio of each error to its threshold; the largest above one fails.
fn judge(rows: Vec<MomentRow>, j: usize, spec: &VerifySpec) -> VerifyReport {
    let mut worst: Option<(f64, String)> = None;
    let mut consider = |ratio: f64, what: String| {
        if ratio > 1.0 && worst.as_ref().is_none_or(|(w, _)| ratio > *w) {
            worst = Some((ratio, what));
        }
    };
    for r in &rows {
        consider(r.particle_mean_err / r.mean_bound, format!("particle mean error {:e} > {:e} at t = {}", r.particle_mean_err, r.mean_bound, r.t));
        consider(r.particle_cov_err / r.cov_bound, format!("particle covariance error {:e} > {:e} at t = {}", r.particle_cov_err, r.cov_bound, r.t));
        consider(r.ode_mean_err / spec.ode_tolerance, format!("ODE mean error {:e} at t = {}", r.ode_mean_err, r.t));
        consider(r.ode_cov_err / spec.ode_tolerance, format!("ODE covariance error {:e} at t = {}", r.ode_cov_err, r.t));
    }
    let mut warnings = Vec::new();
    let mut failure = worst.map(|(_, w)| w);
    if j < spec.min_ensemble {
        let msg = format!("ensemble of {j} particles is below {}; Monte-Carlo error dominates", spec.min_ensemble);
        if spec.strict && failure.is_none() {
            failure = Some(msg);
        } else {
            warnings.push(msg);
        }
    }
    VerifyReport {
        rows,
        ensemble_size: j,
        failure,
        warnings,
    }
}
