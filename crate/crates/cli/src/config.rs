//! Declarative experiment configuration.
//!
//! A config is one JSON document. Matrices may be written as a scalar
//! (a multiple of the identity), a list (a diagonal) or a list of rows.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use eks_core::models::{DarcyConfig, DarcyModel, EllipticModel, ForwardModel, InverseProblem, KlFieldSpec, LinearModel};
use eks_core::rng::domain;
use eks_core::samplers::{SamplerKind, SdeConfig};
use eks_core::{Ensemble, GaussianMoments, Marginal, RngStream, SpdMatrix};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn resolve(&self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>, CliError> {
        match self {
            MatrixSpec::Scalar(s) if rows == cols => Ok(DMatrix::identity(rows, cols) * *s),
            MatrixSpec::Diagonal(d) if rows == cols && d.len() == rows => Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d))),
            MatrixSpec::Full(m) if m.len() == rows && m.iter().all(|r| r.len() == cols) => Ok(DMatrix::from_fn(rows, cols, |i, j| m[i][j])),
            _ => Err(CliError::config(what, format!("expected a {rows}x{cols} matrix"))),
        }
    }

    fn rows(&self) -> Option<usize> {
        match self {
            MatrixSpec::Scalar(_) => None,
            MatrixSpec::Diagonal(d) => Some(d.len()),
            MatrixSpec::Full(m) => Some(m.len()),
        }
    }
}

fn spd(m: &MatrixSpec, dim: usize, what: &str) -> Result<SpdMatrix, CliError> {
    SpdMatrix::new(m.resolve(dim, dim, what)?).map_err(|e| CliError::config(what, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Linear {
        a: Vec<Vec<f64>>,
        gamma: MatrixSpec,
        gamma0: MatrixSpec,
        y: Vec<f64>,
    },
    Elliptic {
        #[serde(default = "default_x1")]
        x1: f64,
        #[serde(default = "default_x2")]
        x2: f64,
        gamma: MatrixSpec,
        gamma0: MatrixSpec,
        y: Vec<f64>,
    },
    Darcy(DarcySpec),
}

fn default_x1() -> f64 {
    0.25
}

fn default_x2() -> f64 {
    0.75
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarcySpec {
    pub grid_n: usize,
    /// Number of KL modes `d`.
    pub dim: usize,
    /// Observation lattice side; `K = lattice_side²`.
    pub lattice_side: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub include_constant_mode: bool,
    /// Observation noise standard deviation; `Γ = noise_std² I`.
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    /// `Γ₀ = prior_variance · I`.
    #[serde(default = "default_prior_variance")]
    pub prior_variance: f64,
    pub data: DarcyData,
}

fn default_tau() -> f64 {
    3.0
}

fn default_alpha() -> f64 {
    2.0
}

fn default_true() -> bool {
    true
}

fn default_noise_std() -> f64 {
    0.1
}

fn default_prior_variance() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DarcyData {
    /// `u† ~ N(0, I)` and `y = G(u†) + η`, both drawn from this seed.
    TruthSeed(u64),
    Y(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    #[serde(default = "default_one")]
    pub dt0: f64,
    #[serde(default = "default_one")]
    pub dt_max: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default = "default_true")]
    pub adaptive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub precondition_identity: bool,
    #[serde(default)]
    pub suppress_noise: bool,
    /// Noisy EKI data-space noise; defaults to `Γ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<MatrixSpec>,
}

fn default_one() -> f64 {
    1.0
}

fn default_eps() -> f64 {
    1e-8
}

impl ParticleSpec {
    pub fn sde_config(&self) -> SdeConfig {
        SdeConfig {
            dt0: self.dt0,
            dt_max: self.dt_max,
            eps: self.eps,
            t_end: self.t_end.unwrap_or(f64::INFINITY),
            adaptive: self.adaptive,
            max_steps: self.max_steps,
            precondition_identity: self.precondition_identity,
            suppress_noise: self.suppress_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RwmhSpec {
    pub n_samples: usize,
    pub tau: f64,
    pub proposal: ProposalSpec,
    /// Chain start; defaults to the pilot mean, or zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProposalSpec {
    Covariance(MatrixSpec),
    /// Covariance and start from the final ensemble of a particle run that
    /// uses the experiment's `ensemble_size` and `init`.
    Pilot(Box<SamplerSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcnSpec {
    pub n_samples: usize,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
}

fn default_burn_in() -> f64 {
    eks_core::diagnostics::DEFAULT_BURN_IN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    Eks(ParticleSpec),
    Eki(ParticleSpec),
    NoisyEki(ParticleSpec),
    Langevin(ParticleSpec),
    Rwmh(RwmhSpec),
    Pcn(PcnSpec),
}

impl SamplerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerSpec::Eks(_) => "eks",
            SamplerSpec::Eki(_) => "eki",
            SamplerSpec::NoisyEki(_) => "noisy_eki",
            SamplerSpec::Langevin(_) => "langevin",
            SamplerSpec::Rwmh(_) => "rwmh",
            SamplerSpec::Pcn(_) => "pcn",
        }
    }

    pub fn particle(&self) -> Option<&ParticleSpec> {
        match self {
            SamplerSpec::Eks(p) | SamplerSpec::Eki(p) | SamplerSpec::NoisyEki(p) | SamplerSpec::Langevin(p) => Some(p),
            _ => None,
        }
    }

    /// The particle method, with `Σ` resolved against the problem.
    pub fn particle_kind(&self, problem: &InverseProblem) -> Result<Option<(SamplerKind, SdeConfig)>, CliError> {
        let Some(p) = self.particle() else { return Ok(None) };
        let kind = match self {
            SamplerSpec::Eks(_) => SamplerKind::Eks,
            SamplerSpec::Eki(_) => SamplerKind::Eki,
            SamplerSpec::Langevin(_) => SamplerKind::Langevin,
            SamplerSpec::NoisyEki(_) => {
                let k = problem.output_dim();
                let sigma = match &p.sigma {
                    Some(m) => m.resolve(k, k, "sampler.sigma")?,
                    None => problem.gamma().matrix().clone(),
                };
                SamplerKind::NoisyEki { sigma }
            }
            _ => unreachable!(),
        };
        Ok(Some((kind, p.sde_config())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Gaussian { mean: Vec<f64>, cov: MatrixSpec },
    Product { coords: Vec<MarginalSpec> },
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MarginalSpec {
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl From<MarginalSpec> for Marginal {
    fn from(m: MarginalSpec) -> Self {
        match m {
            MarginalSpec::Normal { mean, std } => Marginal::Normal { mean, std },
            MarginalSpec::Uniform { low, high } => Marginal::Uniform { low, high },
        }
    }
}

/// Thresholds for `verify-moments`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    /// Particle moments must lie within this many Monte-Carlo standard errors.
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
    /// Moment ODE versus closed form, absolute.
    #[serde(default = "default_ode_tolerance")]
    pub ode_tolerance: f64,
    #[serde(default = "default_ode_dt")]
    pub ode_dt: f64,
    /// Ensembles smaller than this only pass with a warning, or fail when strict.
    #[serde(default = "default_min_ensemble")]
    pub min_ensemble: usize,
    #[serde(default)]
    pub strict: bool,
}

fn default_sigmas() -> f64 {
    5.0
}

fn default_ode_tolerance() -> f64 {
    1e-8
}

fn default_ode_dt() -> f64 {
    1e-3
}

fn default_min_ensemble() -> usize {
    64
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            sigmas: default_sigmas(),
            ode_tolerance: default_ode_tolerance(),
            ode_dt: default_ode_dt(),
            min_ensemble: default_min_ensemble(),
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub sampler: SamplerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySpec>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A problem ready to sample, with the Darcy truth when one was generated.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub problem: InverseProblem,
    pub truth: Option<DVector<f64>>,
    pub kl: Option<KlFieldSpec>,
    /// `A` for linear problems.
    pub linear: Option<DMatrix<f64>>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config {
            path: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Checks dimensions and parameters without building the forward model.
    pub fn validate(&self) -> Result<(), CliError> {
        let d = self.problem_dims()?.0;
        self.validate_sampler(&self.sampler, "sampler")?;
        let needs_ensemble = match &self.sampler {
            SamplerSpec::Rwmh(r) => matches!(r.proposal, ProposalSpec::Pilot(_)),
            SamplerSpec::Pcn(_) => false,
            _ => true,
        };
        if needs_ensemble {
            match self.ensemble_size {
                Some(j) if j >= 2 => {}
                _ => return Err(CliError::config("ensemble_size", "particle methods need ensemble_size >= 2")),
            }
            let init = self.init.as_ref().ok_or_else(|| CliError::config("init", "particle methods need an initial distribution"))?;
            match init {
                InitSpec::Gaussian { mean, cov } => {
                    if mean.len() != d || cov.rows().is_some_and(|r| r != d) {
                        return Err(CliError::config("init", format!("initial Gaussian must have dimension {d}")));
                    }
                    let cov = cov.resolve(d, d, "init.cov")?;
                    GaussianMoments::new(DVector::from_column_slice(mean), cov).map_err(|e| CliError::config("init.cov", e.to_string()))?;
                }
                InitSpec::Product { coords } => {
                    if coords.len() != d {
                        return Err(CliError::config("init.coords", format!("expected {d} coordinates, got {}", coords.len())));
                    }
                    for (i, c) in coords.iter().enumerate() {
                        Marginal::from(*c).validate().map_err(|e| CliError::config(&format!("init.coords[{i}]"), e.to_string()))?;
                    }
                }
                InitSpec::Prior => {}
            }
        }
        let start = match &self.sampler {
            SamplerSpec::Rwmh(r) => r.start.as_ref(),
            SamplerSpec::Pcn(p) => p.start.as_ref(),
            _ => None,
        };
        if start.is_some_and(|s| s.len() != d) {
            return Err(CliError::config("sampler.start", format!("chain start must have length {d}")));
        }
        if let Some(v) = &self.verify {
            if !(v.sigmas > 0.0 && v.ode_tolerance > 0.0 && v.ode_dt > 0.0) {
                return Err(CliError::config("verify", "thresholds and ode_dt must be positive"));
            }
        }
        Ok(())
    }

    fn validate_sampler(&self, s: &SamplerSpec, path: &str) -> Result<(), CliError> {
        if let Some(p) = s.particle() {
            p.sde_config().validate().map_err(|e| CliError::config(path, e.to_string()))?;
            if p.sigma.is_some() && !matches!(s, SamplerSpec::NoisyEki(_)) {
                return Err(CliError::config(&format!("{path}.sigma"), "sigma only applies to noisy_eki"));
            }
            if p.t_end.is_none() && p.max_steps.is_none() {
                return Err(CliError::config(path, "particle runs need t_end or max_steps"));
            }
            if let Some(sigma) = &p.sigma {
                let k = self.problem_dims()?.1;
                let m = sigma.resolve(k, k, &format!("{path}.sigma"))?;
                eks_core::linalg::psd_sqrt(&m).map_err(|e| CliError::config(&format!("{path}.sigma"), e.to_string()))?;
            }
        }
        match s {
            SamplerSpec::Rwmh(r) => {
                if !(r.tau > 0.0) {
                    return Err(CliError::config(&format!("{path}.tau"), "must be positive"));
                }
                check_burn_in(r.burn_in, path)?;
                match &r.proposal {
                    ProposalSpec::Covariance(m) => {
                        spd(m, self.problem_dims()?.0, &format!("{path}.proposal.covariance"))?;
                    }
                    ProposalSpec::Pilot(inner) => {
                        if inner.particle().is_none() {
                            return Err(CliError::config(&format!("{path}.proposal.pilot"), "pilot must be a particle method"));
                        }
                        self.validate_sampler(inner, &format!("{path}.proposal.pilot"))?;
                    }
                }
            }
            SamplerSpec::Pcn(p) => {
                if !(p.beta > 0.0 && p.beta <= 1.0) {
                    return Err(CliError::config(&format!("{path}.beta"), "must lie in (0, 1]"));
                }
                check_burn_in(p.burn_in, path)?;
            }
            _ => {}
        }
        Ok(())
    }

    /// `(d, K)` implied by the problem block, with its matrices checked.
    fn problem_dims(&self) -> Result<(usize, usize), CliError> {
        match &self.problem {
            ProblemSpec::Linear { a, gamma, gamma0, y } => {
                let k = a.len();
                let d = a.first().map_or(0, |r| r.len());
                if k == 0 || d == 0 || a.iter().any(|r| r.len() != d) {
                    return Err(CliError::config("problem.a", "A must be a non-empty rectangular matrix"));
                }
                if y.len() != k {
                    return Err(CliError::config("problem.y", format!("expected {k} entries, got {}", y.len())));
                }
                spd(gamma, k, "problem.gamma")?;
                spd(gamma0, d, "problem.gamma0")?;
                Ok((d, k))
            }
            ProblemSpec::Elliptic { x1, x2, gamma, gamma0, y } => {
                EllipticModel::new(*x1, *x2).map_err(|e| CliError::config("problem", e.to_string()))?;
                if y.len() != 2 {
                    return Err(CliError::config("problem.y", "elliptic data has 2 entries"));
                }
                spd(gamma, 2, "problem.gamma")?;
                spd(gamma0, 2, "problem.gamma0")?;
                Ok((2, 2))
            }
            ProblemSpec::Darcy(s) => {
                let k = s.lattice_side * s.lattice_side;
                if s.dim == 0 || k == 0 {
                    return Err(CliError::config("problem", "dim and lattice_side must be positive"));
                }
                if !(s.noise_std > 0.0 && s.prior_variance > 0.0) {
                    return Err(CliError::config("problem", "noise_std and prior_variance must be positive"));
                }
                if let DarcyData::Y(y) = &s.data {
                    if y.len() != k {
                        return Err(CliError::config("problem.data.y", format!("expected {k} entries, got {}", y.len())));
                    }
                }
                s.darcy_config()?;
                Ok((s.dim, k))
            }
        }
    }

    pub fn build_problem(&self) -> Result<BuiltProblem, CliError> {
        let core = |e: eks_core::Error| CliError::config("problem", e.to_string());
        match &self.problem {
            ProblemSpec::Linear { a, gamma, gamma0, y } => {
                let (d, k) = self.problem_dims()?;
                let a = DMatrix::from_fn(k, d, |i, j| a[i][j]);
                let problem = InverseProblem::new(
                    Arc::new(LinearModel::new(a.clone())),
                    DVector::from_column_slice(y),
                    spd(gamma, k, "problem.gamma")?,
                    spd(gamma0, d, "problem.gamma0")?,
                )
                .map_err(core)?;
                Ok(BuiltProblem {
                    problem,
                    truth: None,
                    kl: None,
                    linear: Some(a),
                })
            }
            ProblemSpec::Elliptic { x1, x2, gamma, gamma0, y } => {
                let problem = InverseProblem::new(
                    Arc::new(EllipticModel::new(*x1, *x2).map_err(core)?),
                    DVector::from_column_slice(y),
                    spd(gamma, 2, "problem.gamma")?,
                    spd(gamma0, 2, "problem.gamma0")?,
                )
                .map_err(core)?;
                Ok(BuiltProblem {
                    problem,
                    truth: None,
                    kl: None,
                    linear: None,
                })
            }
            ProblemSpec::Darcy(s) => {
                let cfg = s.darcy_config()?;
                let kl = cfg.kl.clone();
                let model = DarcyModel::new(cfg).map_err(core)?;
                let k = model.output_dim();
                let (y, truth) = match &s.data {
                    DarcyData::Y(y) => (DVector::from_column_slice(y), None),
                    DarcyData::TruthSeed(seed) => {
                        let root = RngStream::new(*seed);
                        let truth = root.with_domain(domain::TRUTH).standard_normals(s.dim);
                        let clean = model.eval(&truth).map_err(core)?;
                        let noise = root.with_domain(domain::OBSERVATION_NOISE).standard_normals(k) * s.noise_std;
                        (clean + noise, Some(truth))
                    }
                };
                let problem = InverseProblem::new(
                    Arc::new(model),
                    y,
                    SpdMatrix::scaled_identity(k, s.noise_std * s.noise_std).map_err(core)?,
                    SpdMatrix::scaled_identity(s.dim, s.prior_variance).map_err(core)?,
                )
                .map_err(core)?;
                Ok(BuiltProblem {
                    problem,
                    truth,
                    kl: Some(kl),
                    linear: None,
                })
            }
        }
    }

    /// The initial ensemble, drawn from the `INIT` domain of `seed`.
    pub fn initial_ensemble(&self, problem: &InverseProblem) -> Result<Ensemble, CliError> {
        let j = self.ensemble_size.ok_or_else(|| CliError::config("ensemble_size", "missing"))?;
        let stream = RngStream::new(self.seed).with_domain(domain::INIT);
        let d = problem.input_dim();
        let drawn = match self.init.as_ref().ok_or_else(|| CliError::config("init", "missing"))? {
            InitSpec::Gaussian { mean, cov } => {
                let g = GaussianMoments::new(DVector::from_column_slice(mean), cov.resolve(d, d, "init.cov")?)
                    .map_err(|e| CliError::config("init", e.to_string()))?;
                Ensemble::sample_gaussian(&g, j, stream)
            }
            InitSpec::Product { coords } => {
                let marginals: Vec<Marginal> = coords.iter().map(|&c| c.into()).collect();
                Ensemble::sample_product(&marginals, j, stream)
            }
            InitSpec::Prior => {
                let g = GaussianMoments::new(DVector::zeros(d), problem.gamma0().matrix().clone())
                    .map_err(|e| CliError::config("init", e.to_string()))?;
                Ensemble::sample_gaussian(&g, j, stream)
            }
        };
        drawn.map_err(|e| CliError::config("init", e.to_string()))
    }
}

fn check_burn_in(b: f64, path: &str) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&b) {
        return Err(CliError::config(&format!("{path}.burn_in"), "must lie in [0, 1)"));
    }
    Ok(())
}

impl DarcySpec {
    pub fn darcy_config(&self) -> Result<DarcyConfig, CliError> {
        let kl = KlFieldSpec::leading(self.tau, self.alpha, self.dim, self.include_constant_mode)
            .map_err(|e| CliError::config("problem", e.to_string()))?;
        DarcyConfig::new(self.grid_n, self.lattice_side, kl).map_err(|e| CliError::config("problem", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const ELLIPTIC: &str = r#"{
        "problem": {"kind": "elliptic", "gamma": 0.01, "gamma0": 100.0, "y": [27.5, 79.7]},
        "sampler": {"kind": "eks", "max_steps": 30},
        "ensemble_size": 100,
        "init": {"kind": "product", "coords": [
            {"normal": {"mean": 0.0, "std": 1.0}},
            {"uniform": {"low": 90.0, "high": 110.0}}
        ]},
        "seed": 3
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::parse(ELLIPTIC).unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
        assert_eq!(cfg.sampler.particle().unwrap().dt0, 1.0);
        let again = ExperimentConfig::parse(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.to_json(), cfg.to_json());
    }

    #[test]
    fn matrix_forms() {
        assert_eq!(MatrixSpec::Scalar(2.0).resolve(2, 2, "m").unwrap(), DMatrix::identity(2, 2) * 2.0);
        assert_eq!(MatrixSpec::Diagonal(vec![1.0, 3.0]).resolve(2, 2, "m").unwrap(), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0])));
        let full = MatrixSpec::Full(vec![vec![1.0, 2.0, 3.0]]);
        assert_eq!(full.resolve(1, 3, "m").unwrap(), DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]));
        assert!(full.resolve(3, 1, "m").is_err());
        assert!(MatrixSpec::Scalar(1.0).resolve(2, 3, "m").is_err());
    }

    fn rejects(text: &str, needle: &str) {
        match ExperimentConfig::parse(text) {
            Err(CliError::Config { path, message }) => {
                let all = format!("{path}: {message}");
                assert!(all.contains(needle), "{all}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_reported() {
        rejects("{ \"problem\": ", "line 1");
        rejects(&ELLIPTIC.replace("\"seed\": 3", "\"seed\": 3, \"bogus\": 1"), "bogus");
        rejects(&ELLIPTIC.replace("27.5, 79.7", "27.5"), "problem.y");
        rejects(&ELLIPTIC.replace("\"gamma\": 0.01", "\"gamma\": -0.01"), "problem.gamma");
        rejects(&ELLIPTIC.replace("\"ensemble_size\": 100,", ""), "ensemble_size");
        rejects(&ELLIPTIC.replace("\"max_steps\": 30", "\"dt0\": 1.0"), "t_end or max_steps");
        rejects(&ELLIPTIC.replace("\"high\": 110.0", "\"high\": 80.0"), "init.coords[1]");
        rejects(&ELLIPTIC.replace("\"max_steps\": 30", "\"max_steps\": 30, \"sigma\": 1.0"), "sigma");
        rejects(
            &ELLIPTIC.replace(r#"{"kind": "eks", "max_steps": 30}"#, r#"{"kind": "pcn", "n_samples": 10, "beta": 1.5}"#),
            "sampler.beta",
        );
    }

    #[test]
    fn problems_build() {
        let cfg = ExperimentConfig::parse(ELLIPTIC).unwrap();
        let built = cfg.build_problem().unwrap();
        assert_eq!(built.problem.input_dim(), 2);
        let e = cfg.initial_ensemble(&built.problem).unwrap();
        assert_eq!(e.size(), 100);
        assert!(e.particles().row(1).iter().all(|v| (90.0..110.0).contains(v)));

        let darcy = r#"{
            "problem": {"kind": "darcy", "grid_n": 16, "dim": 4, "lattice_side": 2, "data": {"truth_seed": 9}},
            "sampler": {"kind": "pcn", "n_samples": 5, "beta": 0.2}
        }"#;
        let cfg = ExperimentConfig::parse(darcy).unwrap();
        let a = cfg.build_problem().unwrap();
        let b = cfg.build_problem().unwrap();
        assert_eq!(a.problem.output_dim(), 4);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.problem.y(), b.problem.y());
        assert_eq!(a.problem.gamma0().matrix()[(0, 0)], 100.0);
    }
}
