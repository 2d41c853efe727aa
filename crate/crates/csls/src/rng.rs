//! Deterministic random number generation.
//!
//! Every stochastic operation in the crate draws from a ChaCha8 stream seeded
//! with a 64-bit [`Seed`]. ChaCha8 is a fixed, fully specified generator, so
//! equal seeds reproduce equal byte streams on every platform; OS randomness
//! is never consulted. Gaussian variates come from `rand_distr`'s ziggurat
//! sampler on top of that stream.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A 64-bit seed for reproducible runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(pub u64);

impl Seed {
    /// The ChaCha8 stream for this seed.
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// A decorrelated child seed for an independent sub-stream (per label
    /// fraction, per variant, ...). SplitMix64 finalizer over seed ^ stream id.
    pub fn child(self, stream: u64) -> Seed {
        Seed(splitmix64(self.0 ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One standard normal draw.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `n` standard normal draws.
pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}
