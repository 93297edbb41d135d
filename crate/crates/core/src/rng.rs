//! Seeded random streams.
//!
//! Every consumer derives its generator from `(seed, stream)`. ChaCha is a
//! counter-based cipher, so a given pair yields the same sequence on every
//! platform and distinct streams never overlap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for one logical purpose under a run seed.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Well-known stream ids so unrelated consumers never share draws.
pub mod streams {
    pub const SURFACE: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const LATENT: u64 = 4;
    pub const JITTER: u64 = 5;
    pub const SAMPLE: u64 = 6;
    pub const SPLIT: u64 = 7;
}
