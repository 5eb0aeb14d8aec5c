//! The `run` command: one experiment from config to output files.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use eks_core::diagnostics::{marginal_intervals, marginals_csv, post_burn_in, variance_reduction, zeta_csv, Samples, SpreadWeights};
use eks_core::samplers::{pcn_chain, rwmh_chain, ChainResult, McmcConfig, SamplerDriver, SamplerState};
use eks_core::{Ensemble, GaussianMoments, RngStream, SpdMatrix};

use crate::config::{BuiltProblem, ExperimentConfig, ProposalSpec, SamplerSpec};
use crate::error::CliError;
use crate::output::{chain_csv, ensemble_csv, MetricsCsv, OutputDir, TraceCsv};

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub sampler: String,
    pub seed: u64,
    pub dim: usize,
    pub ensemble_size: Option<usize>,
    pub steps: usize,
    pub t_final: Option<f64>,
    pub terminal_mean: Vec<f64>,
    pub terminal_covariance: Vec<Vec<f64>>,
    pub acceptance_rate: Option<f64>,
    pub degenerate_steps: usize,
    pub wall_time_seconds: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A finished particle run.
pub struct ParticleRun {
    pub state: SamplerState,
    pub trace: TraceCsv,
    pub metrics: MetricsCsv,
    pub degenerate_steps: usize,
}

fn h_minus_two(built: &BuiltProblem) -> Option<SpreadWeights> {
    built.kl.as_ref().map(SpreadWeights::h_minus_two)
}

/// Drives the particle method of `sampler` from the config's initial ensemble.
pub fn run_particles(cfg: &ExperimentConfig, sampler: &SamplerSpec, built: &BuiltProblem) -> Result<ParticleRun, CliError> {
    let (kind, sde) = sampler
        .particle_kind(&built.problem)?
        .ok_or_else(|| CliError::config("sampler", "not a particle method"))?;
    let init = cfg.initial_ensemble(&built.problem)?;
    let mut driver = SamplerDriver::new(&built.problem, kind, sde, init, RngStream::new(cfg.seed))?;
    let mut trace = TraceCsv::new(built.problem.input_dim());
    let mut metrics = MetricsCsv::new(h_minus_two(built), built.truth.clone());
    trace.push(&driver.current_stats()?);
    metrics.push(0.0, &driver.state().ensemble)?;
    let mut degenerate_steps = 0;
    while let Some(stats) = driver.step()? {
        log::debug!("step {} t {:.4} misfit {:.4e}", stats.step, stats.t, stats.mean_misfit);
        degenerate_steps += usize::from(stats.degenerate);
        trace.push(&stats);
        metrics.push(stats.t, &driver.state().ensemble)?;
    }
    Ok(ParticleRun {
        state: driver.into_state(),
        trace,
        metrics,
        degenerate_steps,
    })
}

fn prior_variances(built: &BuiltProblem) -> DVector<f64> {
    built.problem.gamma0().matrix().diagonal()
}

fn write_darcy_extras(out: &mut OutputDir, built: &BuiltProblem, samples: &(impl Samples + ?Sized)) -> Result<(), CliError> {
    if built.kl.is_none() {
        return Ok(());
    }
    out.write("zeta.csv", &zeta_csv(&variance_reduction(samples, &prior_variances(built))?))?;
    out.write("marginals.csv", &marginals_csv(&marginal_intervals(samples, 0.95)?))?;
    if let Some(truth) = &built.truth {
        out.write("truth.csv", &chain_csv(std::slice::from_ref(truth), truth.len()))?;
    }
    Ok(())
}

fn start_or_zero(start: Option<&Vec<f64>>, d: usize) -> DVector<f64> {
    start.map_or_else(|| DVector::zeros(d), |s| DVector::from_column_slice(s))
}

/// Runs the configured chain, including a pilot particle run when asked.
pub fn run_chain(cfg: &ExperimentConfig, built: &BuiltProblem, out: Option<&mut OutputDir>) -> Result<(ChainResult, f64), CliError> {
    let d = built.problem.input_dim();
    let rng = RngStream::new(cfg.seed);
    match &cfg.sampler {
        SamplerSpec::Rwmh(r) => {
            let (proposal, pilot_start) = match &r.proposal {
                ProposalSpec::Covariance(m) => (SpdMatrix::new(m.resolve(d, d, "sampler.proposal")?)?, None),
                ProposalSpec::Pilot(inner) => {
                    let pilot = run_particles(cfg, inner, built)?;
                    if let Some(out) = out {
                        out.write("pilot_ensemble.csv", &ensemble_csv(&pilot.state.ensemble))?;
                    }
                    let e = &pilot.state.ensemble;
                    (SpdMatrix::new(e.covariance())?, Some(e.mean()))
                }
            };
            let init = match (&r.start, pilot_start) {
                (Some(s), _) => DVector::from_column_slice(s),
                (None, Some(m)) => m,
                (None, None) => DVector::zeros(d),
            };
            let mc = McmcConfig {
                n_samples: r.n_samples,
                step_scale: r.tau,
                proposal_cov: Some(proposal),
                init,
            };
            Ok((rwmh_chain(&built.problem, &mc, &rng)?, r.burn_in))
        }
        SamplerSpec::Pcn(p) => {
            let mc = McmcConfig {
                n_samples: p.n_samples,
                step_scale: p.beta,
                proposal_cov: None,
                init: start_or_zero(p.start.as_ref(), d),
            };
            Ok((pcn_chain(&built.problem, &mc, &rng)?, p.burn_in))
        }
        _ => Err(CliError::config("sampler", "not an MCMC method")),
    }
}

/// Executes `cfg`, writing every output under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Summary, CliError> {
    let start = Instant::now();
    let built = cfg.build_problem()?;
    let d = built.problem.input_dim();
    let mut out = OutputDir::new(out_dir);
    let summary = if cfg.sampler.particle().is_some() {
        let run = run_particles(cfg, &cfg.sampler, &built)?;
        let e = &run.state.ensemble;
        out.write("final_ensemble.csv", &ensemble_csv(e))?;
        out.write("metrics.csv", &run.metrics.into_string())?;
        write_darcy_extras(&mut out, &built, e)?;
        out.write("trace.csv", &run.trace.into_string())?;
        let m = e.moments();
        Summary {
            sampler: cfg.sampler.name().into(),
            seed: cfg.seed,
            dim: d,
            ensemble_size: Some(e.size()),
            steps: run.state.n,
            t_final: Some(run.state.t),
            terminal_mean: m.mean.iter().copied().collect(),
            terminal_covariance: rows(&m.cov),
            acceptance_rate: None,
            degenerate_steps: run.degenerate_steps,
            wall_time_seconds: 0.0,
        }
    } else {
        let (chain, burn_in) = run_chain(cfg, &built, Some(&mut out))?;
        let kept = post_burn_in(&chain, burn_in)?;
        out.write("chain.csv", &chain_csv(&chain.samples, d))?;
        out.write("trace.csv", &chain_trace_csv(&chain, d))?;
        let kept_ensemble = Ensemble::from_vectors(kept)?;
        let mut metrics = MetricsCsv::new(h_minus_two(&built), built.truth.clone());
        metrics.push(kept.len() as f64, &kept_ensemble)?;
        out.write("metrics.csv", &metrics.into_string())?;
        write_darcy_extras(&mut out, &built, kept)?;
        let m: GaussianMoments = kept.sample_moments()?;
        Summary {
            sampler: cfg.sampler.name().into(),
            seed: cfg.seed,
            dim: d,
            ensemble_size: None,
            steps: chain.samples.len(),
            t_final: None,
            terminal_mean: m.mean.iter().copied().collect(),
            terminal_covariance: rows(&m.cov),
            acceptance_rate: Some(chain.acceptance_rate),
            degenerate_steps: 0,
            wall_time_seconds: 0.0,
        }
    };
    let summary = Summary {
        wall_time_seconds: start.elapsed().as_secs_f64(),
        ..summary
    };
    out.write("summary.json", &(serde_json::to_string_pretty(&summary).expect("summary serialises") + "\n"))?;
    for path in out.written() {
        log::info!("wrote {}", path.display());
    }
    Ok(summary)
}

/// Running chain mean at up to 100 evenly spaced checkpoints.
fn chain_trace_csv(chain: &ChainResult, d: usize) -> String {
    let n = chain.samples.len();
    let every = n.div_ceil(100).max(1);
    let mut text = format!("sample,{}\n", (0..d).map(|i| format!("mean{i}")).collect::<Vec<_>>().join(","));
    let mut sum = DVector::zeros(d);
    for (k, s) in chain.samples.iter().enumerate() {
        sum += s;
        if (k + 1) % every == 0 || k + 1 == n {
            let mean = &sum / (k + 1) as f64;
            let cols: Vec<String> = mean.iter().map(|v| format!("{v:e}")).collect();
            text.push_str(&format!("{},{}\n", k + 1, cols.join(",")));
        }
    }
    text
}

