//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a [`RngStream`] identified by
//! `(master_seed, domain, particle, step)`. The four words form a ChaCha20
//! key, so a stream is a pure function of its identifier: updating particles
//! in any order, or on any number of threads, yields the same bits.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Well-known stream domains, so unrelated consumers never share a key.
pub mod domain {
    pub const INIT: u64 = 1;
    pub const PARTICLE_NOISE: u64 = 2;
    pub const DATA_NOISE: u64 = 3;
    pub const MCMC: u64 = 4;
    pub const TRUTH: u64 = 5;
    pub const OBSERVATION_NOISE: u64 = 6;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    master_seed: u64,
    domain: u64,
    particle: u64,
    step: u64,
}

impl RngStream {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            domain: 0,
            particle: 0,
            step: 0,
        }
    }

    pub fn with_domain(self, domain: u64) -> Self {
        Self { domain, ..self }
    }

    /// Selects the `(particle, step)` sub-stream.
    pub fn stream(self, particle: u64, step: u64) -> Self {
        Self {
            particle,
            step,
            ..self
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn domain(&self) -> u64 {
        self.domain
    }

    pub fn stream_id(&self) -> (u64, u64) {
        (self.particle, self.step)
    }

    /// A fresh generator positioned at draw index zero of this stream.
    pub fn rng(&self) -> ChaCha20Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.domain.to_le_bytes());
        key[16..24].copy_from_slice(&self.particle.to_le_bytes());
        key[24..32].copy_from_slice(&self.step.to_le_bytes());
        ChaCha20Rng::from_seed(key)
    }

    /// The first `n` standard normal draws of this stream.
    pub fn standard_normals(&self, n: usize) -> DVector<f64> {
        let mut rng = self.rng();
        DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
    }
}
