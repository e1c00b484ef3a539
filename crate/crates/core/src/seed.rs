//! Seed derivation. Every random choice in the crate draws from a ChaCha
//! stream keyed by a (seed, salt) pair so that runs are reproducible and
//! independent subsystems never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Salts used to separate the random streams of each subsystem.
pub mod salt {
    pub const SCENE: u64 = 0x5ce7e;
    pub const VALUES: u64 = 0x7a1e5;
    pub const GOALS: u64 = 0x60a15;
    pub const USER_REPLY: u64 = 0x2e91;
    pub const AGENT: u64 = 0xa6e7;
    pub const SESSION: u64 = 0x5e55;
}

/// SplitMix64 finalizer over `seed ^ salt`.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, salt))
}

/// FNV-1a over a byte stream; used where a stable content hash is needed.
pub fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
