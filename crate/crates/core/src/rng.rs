//! Seeded, stream-separated random number generators.
//!
//! Every entity (child, household, permutation, batch) draws from its own
//! ChaCha stream so results do not depend on iteration order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CHILD: u64 = 0;
pub const HOUSEHOLD: u64 = 1 << 40;
pub const ASSIGN_HOUSEHOLD: u64 = 2 << 40;
pub const ASSIGN_CHILD: u64 = 3 << 40;
pub const STRUCTURE: u64 = 4 << 40;
pub const PILOT: u64 = 5 << 40;
pub const TIE_BREAK: u64 = 6 << 40;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
