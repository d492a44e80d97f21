//! Keyed random streams.
//!
//! Every stream is a ChaCha8 generator seeded with the run seed and placed on
//! its own 64-bit stream id, so streams for different workers or quantities
//! never overlap and each is a pure function of `(seed, domain, id)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    /// Per-worker gradient noise.
    WorkerNoise = 1,
    /// Collective sync schedule, one per synchronized quantity.
    Schedule = 2,
    /// Per-worker noise scale and per-worker objective draws.
    WorkerSetup = 3,
}

pub fn stream(seed: u64, domain: Domain, id: u64) -> Stream {
    debug_assert!(id < (1 << 56), "stream id out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 56) | id);
    rng
}
