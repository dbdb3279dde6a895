//! Seeded random number generation.
//!
//! Every randomized routine takes an explicit seed. Independent sub-streams
//! are derived from one seed with [`stream`], so results do not depend on
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// Generator for `seed` on stream 0.
pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for `seed` on an independent stream `id`.
pub fn stream(seed: u64, id: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
