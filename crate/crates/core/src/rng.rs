//! Seeded random streams.
//!
//! Every sampling step draws from a ChaCha stream derived from the run seed
//! and a `(stage, index)` tag, so per-series work gives the same draws
//! whether it runs sequentially or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root stream for a seed.
pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, tags...)`.
pub fn derived(seed: u64, tags: &[u64]) -> StreamRng {
    let mut h = mix(seed);
    for &t in tags {
        h = mix(h ^ mix(t.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    ChaCha8Rng::seed_from_u64(h)
}
