//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by
//! `(seed, domain)` and positioned on stream `index`. Replicate `r` always
//! reads stream `r`, so results do not depend on how replicates are
//! scheduled across threads.
//!
//! Standard normals use the Box–Muller transform on two uniforms
//! `u1 = 1 - U[0,1)` and `u2 = U[0,1)`, emitting the cosine and then the
//! sine branch.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags keep the streams of different consumers disjoint.
pub mod domain {
    pub const NULL: u64 = 1;
    pub const DATA: u64 = 2;
    pub const TEST_SEED: u64 = 3;
    pub const CALIBRATION: u64 = 4;
}

pub fn stream_rng(seed: u64, domain: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// Generator used for null replicate `replicate` of a test seeded with `seed`.
pub fn null_rng(seed: u64, replicate: u64) -> StreamRng {
    stream_rng(seed, domain::NULL, replicate)
}

/// A fresh 64-bit seed derived from `(seed, domain, index)`.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    stream_rng(seed, domain, index).next_u64()
}

/// Box–Muller standard normal sampler.
#[derive(Debug, Clone)]
pub struct NormalSampler<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: Rng> NormalSampler<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.rng.gen::<f64>();
        let u2 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}
