//! Deterministic seed derivation.
//!
//! Every source of randomness in a run (data order, dropout, masking,
//! augmentation, parameter init) is a ChaCha stream whose seed derives from
//! one base seed plus a tag path. Derivation is stateless, so any step of a
//! run can be reproduced from (config, step index) alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates sequential tags.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from a base seed and a tag path.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag.wrapping_add(0x517c_c1b7_2722_0a95)));
    }
    state
}

/// Seeded stream for a derived seed.
pub fn stream(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
