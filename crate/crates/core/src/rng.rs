//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type used everywhere in the crate.
pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generator whose stream depends only on `seed` and the `path` of stream ids.
///
/// Distinct paths give statistically independent streams, so work can be split by
/// (step, prompt, trace) without threading one generator through everything.
pub fn substream(seed: u64, path: &[u64]) -> Rng {
    let mut state = splitmix(seed);
    for &p in path {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    ChaCha8Rng::seed_from_u64(state)
}
