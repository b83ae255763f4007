//! Seed derivation for reproducible parallel randomness.
//!
//! Every randomized routine in the crate takes a `u64` seed and owns a
//! ChaCha12 generator. Parallel work (replications, test runs) derives one
//! child seed per work item with [`derive`], so the item's stream is fixed
//! by `(master seed, item index)` no matter how the work is scheduled.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 finalizer; full-period mixing of a 64-bit state.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the child seed for work item `index` within lane `lane`.
///
/// Lanes keep independent uses of the same master seed (e.g. data generation
/// vs. test randomization inside one replication) from colliding.
pub fn derive(master: u64, lane: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ lane.wrapping_mul(0xa076_1d64_78bd_642f)) ^ index)
}

/// A ChaCha12 generator seeded for a given stream of a master seed.
pub fn rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
