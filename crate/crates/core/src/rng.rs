//! Deterministic random streams.
//!
//! Every random draw in a run comes from a `ChaCha8Rng` seeded by
//! [`stream_seed`], which mixes the run seed, a run key and a stream label
//! with FNV-1a and SplitMix64. Both are fixed, platform-independent
//! functions, so the same `(seed, key, label)` triple produces the same
//! stream on every machine and in every scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for all simulation randomness.
pub type SimRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Seed for the stream `label` of run `(seed, key)`.
pub fn stream_seed(seed: u64, key: &str, label: &str) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ fnv1a(key.as_bytes()));
    splitmix64(h ^ fnv1a(label.as_bytes()))
}

pub fn stream(seed: u64, key: &str, label: &str) -> SimRng {
    SimRng::seed_from_u64(stream_seed(seed, key, label))
}
