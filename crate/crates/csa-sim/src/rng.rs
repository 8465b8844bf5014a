//! Deterministic stream derivation from a master seed.
//!
//! Every stochastic component takes an explicit RNG. Sub-streams are derived
//! from (master seed, tag path) with a splitmix64 chain so sweep points and
//! per-image channels are reproducible and order-independent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a master seed with a tag path into a child seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master;
    let mut out = splitmix64(&mut state);
    for &t in tags {
        state ^= t;
        out = splitmix64(&mut state);
    }
    out
}

/// RNG for the stream identified by (master, tags).
pub fn stream(master: u64, tags: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}
