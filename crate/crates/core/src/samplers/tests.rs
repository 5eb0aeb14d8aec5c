use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::*;
use crate::ensemble::GaussianMoments;
use crate::linalg::SpdMatrix;
use crate::models::{EllipticModel, ForwardModel, LinearModel};
use crate::rng::domain;

fn linear_problem(a: DMatrix<f64>, y: DVector<f64>, gamma: SpdMatrix, gamma0: SpdMatrix) -> InverseProblem {
    InverseProblem::new(Arc::new(LinearModel::new(a)), y, gamma, gamma0).unwrap()
}

/// `A = Γ = Γ₀ = 1`, `y = 0`; posterior `N(0, ½)`.
fn scalar_problem() -> InverseProblem {
    linear_problem(
        DMatrix::identity(1, 1),
        DVector::zeros(1),
        SpdMatrix::identity(1),
        SpdMatrix::identity(1),
    )
}

fn random_linear_problem(seed: u64, d: usize, k: usize) -> InverseProblem {
    let z = RngStream::new(seed).standard_normals(k * d + k);
    let a = DMatrix::from_column_slice(k, d, &z.as_slice()[..k * d]);
    let y = DVector::from_column_slice(&z.as_slice()[k * d..]);
    let gamma = SpdMatrix::diagonal(&(0..k).map(|i| 0.5 + 0.1 * i as f64).collect::<Vec<_>>()).unwrap();
    let gamma0 = SpdMatrix::scaled_identity(d, 2.0).unwrap();
    linear_problem(a, y, gamma, gamma0)
}

fn sample(d: usize, j: usize, mean: f64, var: f64, seed: u64) -> Ensemble {
    let g = GaussianMoments::new(DVector::from_element(d, mean), DMatrix::identity(d, d) * var).unwrap();
    Ensemble::sample_gaussian(&g, j, RngStream::new(seed).with_domain(domain::INIT)).unwrap()
}

fn elliptic_problem() -> InverseProblem {
    InverseProblem::new(
        Arc::new(EllipticModel::default()),
        DVector::from_vec(vec![27.5, 79.7]),
        SpdMatrix::scaled_identity(2, 0.01).unwrap(),
        SpdMatrix::scaled_identity(2, 100.0).unwrap(),
    )
    .unwrap()
}

fn elliptic_init(j: usize, seed: u64) -> Ensemble {
    let cols: Vec<DVector<f64>> = (0..j)
        .map(|k| {
            let z = RngStream::new(seed).stream(k as u64, 0).rng();
            use rand::Rng;
            let mut z = z;
            let a: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut z);
            DVector::from_vec(vec![a, z.random_range(90.0..110.0)])
        })
        .collect();
    Ensemble::from_vectors(&cols).unwrap()
}

#[test]
fn drift_matrix_consensus_is_zero() {
    let p = random_linear_problem(1, 3, 2);
    let u = DVector::from_vec(vec![0.3, -1.0, 2.0]);
    let e = Ensemble::from_vectors(&[u.clone(), u.clone()]).unwrap();
    let g = p.forward_ensemble(&e).unwrap();
    let d = eks_drift_matrix(&e, &g, p.y(), p.gamma()).unwrap();
    assert!(d.iter().all(|&v| v == 0.0));
}

#[test]
fn drift_matrix_brute_force() {
    let p = linear_problem(
        DMatrix::identity(1, 1),
        DVector::zeros(1),
        SpdMatrix::identity(1),
        SpdMatrix::identity(1),
    );
    let e = Ensemble::from_vectors(&[DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)]).unwrap();
    let g = p.forward_ensemble(&e).unwrap();
    let d = eks_drift_matrix(&e, &g, p.y(), p.gamma()).unwrap();
    assert_eq!(d, DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]));

    for seed in 0..5 {
        let p = random_linear_problem(seed, 4, 3);
        let e = sample(4, 7, 0.5, 2.0, seed + 100);
        let g = p.forward_ensemble(&e).unwrap();
        let d = eks_drift_matrix(&e, &g, p.y(), p.gamma()).unwrap();
        let jn = e.size();
        let gbar = g.iter().fold(DVector::zeros(3), |a, b| a + b) / jn as f64;
        for j in 0..jn {
            for k in 0..jn {
                let expect = p.gamma().weighted_inner(&(&g[k] - &gbar), &(&g[j] - p.y())).unwrap() / jn as f64;
                assert!((d[(j, k)] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
            }
        }
        // Row sums vanish, so centring u⁽ᵏ⁾ leaves the drift unchanged.
        let u = e.particles();
        let drift = u * d.transpose();
        let centred = crate::ensemble::centered(u) * d.transpose();
        assert!((drift - centred).amax() < 1e-12);
    }
}

#[test]
fn drift_matrix_dimension_errors() {
    let p = random_linear_problem(2, 2, 3);
    let e = sample(2, 4, 0.0, 1.0, 3);
    let g = p.forward_ensemble(&e).unwrap();
    assert!(eks_drift_matrix(&e, &g[..3], p.y(), p.gamma()).is_err());
    assert!(eks_drift_matrix(&e, &g, &DVector::zeros(2), p.gamma()).is_err());
}

#[test]
fn factored_norm_matches_dense() {
    for seed in 0..4 {
        let p = random_linear_problem(seed, 3, 4);
        let e = sample(3, 9, 0.1, 1.0, seed);
        let g = p.forward_ensemble(&e).unwrap();
        let inter = particles::Interaction::new(&e, &g, p.y(), p.gamma()).unwrap();
        let dense = inter.matrix();
        assert!((inter.frobenius_norm() - dense.norm()).abs() < 1e-12 * dense.norm());
        let a = inter.drift(e.particles(), 0.3);
        let b = e.particles() - e.particles() * dense.transpose() * 0.3;
        assert!((a - b).amax() < 1e-12);
    }
}

#[test]
fn adaptive_dt_examples() {
    let cfg = SdeConfig::default();
    assert_eq!(adaptive_dt(&DMatrix::zeros(3, 3), &cfg), 1.0);
    let d = DMatrix::from_diagonal_element(1, 1, 9.0);
    let cfg0 = SdeConfig { eps: 0.0, ..cfg.clone() };
    assert!((adaptive_dt(&d, &cfg0) - 1.0 / 9.0).abs() < 1e-16);
    assert_eq!(adaptive_dt(&d, &SdeConfig::fixed(0.3, 1.0)), 0.3);

    let m = DMatrix::from_fn(5, 5, |i, j| ((i * 5 + j) as f64).sin());
    let perm = [3usize, 0, 4, 1, 2];
    let pm = DMatrix::from_fn(5, 5, |i, j| m[(perm[i], perm[j])]);
    let (a, b) = (adaptive_dt(&m, &cfg), adaptive_dt(&pm, &cfg));
    assert!((a - b).abs() <= 1e-15 * a);
}

#[test]
fn collapsed_ensemble_is_a_fixed_point() {
    let p = random_linear_problem(4, 2, 2);
    let u = DVector::from_vec(vec![0.7, -0.2]);
    let s = SamplerState::new(Ensemble::from_vectors(&vec![u; 5]).unwrap());
    let rng = RngStream::new(9);
    let cfg = SdeConfig::default();
    for next in [
        eks_step(&s, &p, &cfg, &rng).unwrap(),
        eki_step(&s, &p, &cfg).unwrap(),
        noisy_eki_step(&s, &p, p.gamma().matrix(), &cfg, &rng).unwrap(),
        langevin_particles_step(&s, &p, &cfg, &rng).unwrap(),
    ] {
        assert_eq!(next.ensemble, s.ensemble);
        assert_eq!(next.n, 1);
        assert!(next.t > 0.0);
    }
}

#[test]
fn eks_small_step_limit_is_first_order() {
    let p = random_linear_problem(5, 3, 2);
    let e = sample(3, 6, 0.2, 1.5, 11);
    let s = SamplerState::new(e.clone());
    let g = p.forward_ensemble(&e).unwrap();
    let d = eks_drift_matrix(&e, &g, p.y(), p.gamma()).unwrap();
    let c = e.covariance();
    let g0_inv = p.gamma0().inverse();
    // Explicit right-hand side, particle by particle.
    let rhs = DMatrix::from_fn(3, 6, |i, j| {
        let mut v = 0.0;
        for k in 0..6 {
            v -= d[(j, k)] * e.particles()[(i, k)];
        }
        let prior = &c * &g0_inv * e.particles().column(j);
        v - prior[i]
    });
    let errors: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&dt| {
            let cfg = SdeConfig {
                suppress_noise: true,
                ..SdeConfig::fixed(dt, 1.0)
            };
            let next = eks_step(&s, &p, &cfg, &RngStream::new(1)).unwrap();
            ((next.ensemble.particles() - e.particles()) / dt - &rhs).norm()
        })
        .collect();
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 10.0).abs() < 0.5, "ratio {ratio}");
    }
}

#[test]
fn eks_scalar_posterior_variance() {
    let p = scalar_problem();
    let traj = run_sampler(&p, SamplerKind::Eks, &SdeConfig::fixed(0.01, 5.0), sample(1, 512, 2.0, 4.0, 1), RngStream::new(2)).unwrap();
    let var = traj.last().ensemble.covariance()[(0, 0)];
    let se = 0.5 * (2.0f64 / 512.0).sqrt();
    assert!((var - 0.5).abs() < 3.0 * se, "variance {var}");
    assert!((traj.last().t - 5.0).abs() < 1e-12);
}

#[test]
fn eki_contracts_covariance() {
    let p = scalar_problem();
    let mut s = SamplerState::new(sample(1, 50, 1.0, 1.0, 3));
    let cfg = SdeConfig::default();
    let mut last = s.ensemble.covariance()[(0, 0)];
    for _ in 0..40 {
        s = eki_step(&s, &p, &cfg).unwrap();
        let c = s.ensemble.covariance()[(0, 0)];
        assert!(c <= last);
        last = c;
    }
}

#[test]
fn eki_collapses_at_least_algebraically() {
    // Continuous time gives C(t) = C₀ / (1 + C₀ t) for this problem.
    let p = scalar_problem();
    let init = sample(1, 100, 0.0, 1.0, 4);
    let c0 = init.covariance().trace();
    let cfg = SdeConfig {
        t_end: 100.0,
        ..SdeConfig::default()
    };
    let traj = run_sampler(&p, SamplerKind::Eki, &cfg, init, RngStream::new(0)).unwrap();
    assert!(traj.stats.windows(2).all(|w| w[1].cov_trace <= w[0].cov_trace));
    let end = traj.stats.last().unwrap();
    assert_eq!(end.t, 100.0);
    assert!(end.cov_trace < c0 / (1.0 + 100.0 * c0), "trace ratio {}", end.cov_trace / c0);
}

#[test]
fn eki_reduces_elliptic_misfit() {
    let p = elliptic_problem();
    let traj = run_sampler(&p, SamplerKind::Eki, &SdeConfig::iterations(30), elliptic_init(1000, 7), RngStream::new(0)).unwrap();
    assert_eq!(traj.stats.len(), 30);
    assert!(traj.stats.last().unwrap().mean_misfit < traj.initial.mean_misfit);
    let decreasing = traj.stats.windows(2).filter(|w| w[1].mean_misfit <= w[0].mean_misfit).count();
    assert_eq!(decreasing, 29);
}

#[test]
fn noisy_eki_without_noise_is_eki() {
    let p = random_linear_problem(6, 3, 4);
    let s = SamplerState::new(sample(3, 8, 0.0, 1.0, 5));
    let cfg = SdeConfig::default();
    let a = eki_step(&s, &p, &cfg).unwrap();
    let b = noisy_eki_step(&s, &p, &DMatrix::zeros(4, 4), &cfg, &RngStream::new(3)).unwrap();
    assert_eq!(a, b);
    assert!(noisy_eki_step(&s, &p, &DMatrix::zeros(3, 3), &cfg, &RngStream::new(3)).is_err());
}

#[test]
fn noisy_eki_reaches_posterior_at_time_one() {
    let p = scalar_problem();
    let kind = SamplerKind::NoisyEki {
        sigma: DMatrix::identity(1, 1),
    };
    let traj = run_sampler(&p, kind, &SdeConfig::fixed(1e-3, 1.0), sample(1, 4096, 0.0, 1.0, 8), RngStream::new(3)).unwrap();
    let var = traj.last().ensemble.covariance()[(0, 0)];
    assert!((var - 0.5).abs() < 0.035, "variance {var}");
}

#[test]
fn langevin_matches_eks_on_linear_problems() {
    let p = random_linear_problem(7, 4, 3);
    let rng = RngStream::new(21);
    let cfg = SdeConfig {
        t_end: 50.0,
        ..SdeConfig::iterations(50)
    };
    let init = sample(4, 64, 0.0, 1.0, 9);
    let a = run_sampler(&p, SamplerKind::Eks, &cfg, init.clone(), rng).unwrap();
    let b = run_sampler(&p, SamplerKind::Langevin, &cfg, init, rng).unwrap();
    assert_eq!(a.states.len(), 51);
    for (x, y) in a.states.iter().zip(&b.states) {
        assert_eq!(x, y);
    }
}

#[test]
fn langevin_requires_jacobian() {
    #[derive(Debug)]
    struct Opaque;
    impl ForwardModel for Opaque {
        fn input_dim(&self) -> usize {
            1
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn eval(&self, u: &DVector<f64>) -> crate::Result<DVector<f64>> {
            Ok(u.map(|v| v * v))
        }
    }
    let p = InverseProblem::new(Arc::new(Opaque), DVector::zeros(1), SpdMatrix::identity(1), SpdMatrix::identity(1)).unwrap();
    let s = SamplerState::new(sample(1, 4, 0.0, 1.0, 1));
    let err = langevin_particles_step(&s, &p, &SdeConfig::default(), &RngStream::new(0));
    assert!(matches!(err, Err(Error::MissingJacobian)));
    assert!(SamplerDriver::new(&p, SamplerKind::Langevin, SdeConfig::default(), s.ensemble, RngStream::new(0)).is_err());
}

#[test]
fn zero_noise_steps_reduce_to_drift() {
    let p = random_linear_problem(8, 2, 2);
    let s = SamplerState::new(sample(2, 10, 0.5, 1.0, 2));
    let quiet = SdeConfig {
        suppress_noise: true,
        ..SdeConfig::default()
    };
    let a = eks_step(&s, &p, &quiet, &RngStream::new(1)).unwrap();
    let b = eks_step(&s, &p, &quiet, &RngStream::new(2)).unwrap();
    assert_eq!(a, b);
    let c = noisy_eki_step(&s, &p, p.gamma().matrix(), &quiet, &RngStream::new(3)).unwrap();
    assert_eq!(c, eki_step(&s, &p, &quiet).unwrap());
}

#[test]
fn run_sampler_bookkeeping() {
    let p = scalar_problem();
    let init = sample(1, 16, 1.0, 1.0, 5);
    let none = run_sampler(&p, SamplerKind::Eks, &SdeConfig { t_end: 0.0, ..SdeConfig::default() }, init.clone(), RngStream::new(0)).unwrap();
    assert_eq!(none.states.len(), 1);
    assert!(none.stats.is_empty());

    let traj = run_sampler(&p, SamplerKind::Eks, &SdeConfig { t_end: 3.3, ..SdeConfig::default() }, init, RngStream::new(0)).unwrap();
    assert!(traj.stats.windows(2).all(|w| w[1].t > w[0].t));
    assert!(traj.stats.iter().all(|s| s.dt > 0.0 && s.dt <= 1.0));
    assert_eq!(traj.last().t, 3.3);
    let total: f64 = traj.stats.iter().map(|s| s.dt).sum();
    assert!((total - 3.3).abs() < 1e-12);
    for (k, s) in traj.stats.iter().enumerate() {
        assert_eq!(s.step, k + 1);
    }
}

#[test]
fn elliptic_iterations_are_counted() {
    let p = elliptic_problem();
    let traj = run_sampler(&p, SamplerKind::Eks, &SdeConfig::iterations(30), elliptic_init(1000, 1), RngStream::new(2)).unwrap();
    assert_eq!(traj.stats.len(), 30);
    assert_eq!(traj.states.len(), 31);
}

#[test]
fn runs_are_reproducible() {
    let p = random_linear_problem(9, 3, 3);
    let cfg = SdeConfig::iterations(10);
    let a = run_sampler(&p, SamplerKind::Eks, &cfg, sample(3, 20, 0.0, 1.0, 1), RngStream::new(4)).unwrap();
    let b = run_sampler(&p, SamplerKind::Eks, &cfg, sample(3, 20, 0.0, 1.0, 1), RngStream::new(4)).unwrap();
    assert_eq!(a.states, b.states);
    let c = run_sampler(&p, SamplerKind::Eks, &cfg, sample(3, 20, 0.0, 1.0, 1), RngStream::new(5)).unwrap();
    assert_ne!(a.last(), c.last());
}

fn prior_only(d: usize, gamma0: SpdMatrix) -> InverseProblem {
    linear_problem(DMatrix::zeros(1, d), DVector::zeros(1), SpdMatrix::identity(1), gamma0)
}

#[test]
fn rwmh_standard_normal_target() {
    let p = prior_only(1, SpdMatrix::identity(1));
    let cfg = McmcConfig {
        n_samples: 100_000,
        step_scale: 2.4 * 2.4,
        proposal_cov: Some(SpdMatrix::identity(1)),
        init: DVector::zeros(1),
    };
    let chain = rwmh_chain(&p, &cfg, &RngStream::new(3)).unwrap();
    assert_eq!(chain.samples.len(), 100_000);
    let xs: Vec<f64> = chain.samples.iter().map(|v| v[0]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    assert!((var - 1.0).abs() < 0.05, "variance {var}");
    assert!(chain.acceptance_rate > 0.2 && chain.acceptance_rate < 0.6);
}

#[test]
fn rwmh_tiny_proposals_are_accepted() {
    let p = prior_only(2, SpdMatrix::identity(2));
    let cfg = McmcConfig {
        n_samples: 2000,
        step_scale: 1e-12,
        proposal_cov: Some(SpdMatrix::identity(2)),
        init: DVector::from_vec(vec![0.1, 0.2]),
    };
    let chain = rwmh_chain(&p, &cfg, &RngStream::new(1)).unwrap();
    assert!(chain.acceptance_rate > 0.99);
    assert!(rwmh_chain(&p, &McmcConfig { proposal_cov: None, ..cfg.clone() }, &RngStream::new(1)).is_err());
    assert!(rwmh_chain(&p, &McmcConfig { step_scale: 0.0, ..cfg }, &RngStream::new(1)).is_err());
}

#[test]
fn pcn_without_data_samples_the_prior() {
    let l = DMatrix::from_fn(6, 6, |i, j| if i >= j { 1.0 / (1.0 + i as f64 + j as f64) } else { 0.0 });
    let gamma0 = SpdMatrix::new(&l * l.transpose() + DMatrix::identity(6, 6)).unwrap();
    let p = prior_only(6, gamma0.clone());
    let cfg = McmcConfig {
        n_samples: 100_000,
        step_scale: 0.8,
        proposal_cov: None,
        init: DVector::zeros(6),
    };
    let chain = pcn_chain(&p, &cfg, &RngStream::new(12)).unwrap();
    assert_eq!(chain.acceptance_rate, 1.0);
    let e = Ensemble::from_vectors(&chain.samples).unwrap();
    let cov = e.covariance();
    let g = gamma0.matrix();
    for i in 0..4 {
        for j in 0..4 {
            let scale = (g[(i, i)] * g[(j, j)]).sqrt();
            assert!((cov[(i, j)] - g[(i, j)]).abs() < 0.1 * scale, "entry ({i},{j})");
        }
    }
}

#[test]
fn pcn_beta_one_is_an_independence_sampler() {
    let p = prior_only(1, SpdMatrix::identity(1));
    let cfg = McmcConfig {
        n_samples: 20_000,
        step_scale: 1.0,
        proposal_cov: None,
        init: DVector::from_element(1, 5.0),
    };
    let xs: Vec<f64> = pcn_chain(&p, &cfg, &RngStream::new(4)).unwrap().samples.iter().map(|v| v[0]).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let lag1 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1.0) / var;
    assert!(lag1.abs() < 0.03, "lag-1 autocorrelation {lag1}");
    assert!(pcn_chain(&p, &McmcConfig { step_scale: 1.5, ..cfg }, &RngStream::new(4)).is_err());
}
