//! Seeded random streams.
//!
//! Every independent unit of work (a fold, a configuration, a noise draw)
//! gets its own ChaCha stream derived from the master seed, so results do
//! not depend on the order in which the units are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn master(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator seeded with `seed`.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A child seed for nested splitting, e.g. stream `j` inside fold `k`.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    use rand::RngCore;
    stream(seed, index.wrapping_add(1 << 32)).next_u64()
}
