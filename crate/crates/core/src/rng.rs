//! Seed derivation.
//!
//! Every random choice in the simulator draws from its own ChaCha stream
//! whose seed is derived from the experiment seed plus a path of integers
//! (purpose tag, cluster, round, client). Streams never depend on the order
//! in which work is scheduled, so parallel execution cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Purpose tags used as the first path element.
pub mod tag {
    pub const INIT: u64 = 0x01;
    pub const SYNTHETIC: u64 = 0x02;
    pub const UNDERSAMPLE: u64 = 0x03;
    pub const SPLIT: u64 = 0x04;
    pub const SAMPLE: u64 = 0x05;
    pub const LOCAL: u64 = 0x06;
    pub const PERSONALIZE: u64 = 0x07;
    pub const CLUSTER_PASS: u64 = 0x08;
    pub const CENTRAL: u64 = 0x09;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(seed, path))
}

/// FNV-1a over 64-bit words. Used for spec fingerprints and parameter hashes.
pub fn fnv1a(words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
