//! Random stream layout.
//!
//! Every replication owns a ChaCha8 generator (`rand_chacha` 0.9) keyed by a
//! 64-bit replication seed. Independent ChaCha streams split it further:
//! stream 0 feeds the policy or the contention draws, stream `1 + n` feeds
//! the arrivals of terminal `n`. Arrival streams consume exactly one variate
//! per terminal per slot, so two policies run from the same seed see the same
//! arrivals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const POLICY_STREAM: u64 = 0;

pub fn arrival_stream(terminal: usize) -> u64 {
    1 + terminal as u64
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep` derived from the scenario seed.
pub fn replication_seed(base: u64, rep: u64) -> u64 {
    splitmix64(base ^ splitmix64(rep))
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Arrival generators for `n` terminals.
pub fn arrival_streams(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n).map(|t| stream(seed, arrival_stream(t))).collect()
}
