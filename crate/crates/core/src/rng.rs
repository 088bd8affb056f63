//! Seed handling.
//!
//! Every stochastic stage takes an explicit 64-bit seed so runs are
//! reproducible bit-for-bit. Stages that need several independent streams
//! derive child seeds with a SplitMix64-style mix so that adding a stream
//! never perturbs the existing ones.

use rand_chacha::ChaCha12Rng;

/// The deterministic generator used throughout the crate.
pub type SeededRng = ChaCha12Rng;

/// SplitMix64 finalizer.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from a master seed and a textual domain label.
pub fn subseed(master: u64, label: &str) -> u64 {
    let mut h = mix(master);
    for b in label.bytes() {
        h = mix(h ^ u64::from(b));
    }
    h
}

/// Derives a child seed additionally keyed by an index (e.g. a session id).
pub fn subseed_indexed(master: u64, label: &str, index: u64) -> u64 {
    mix(subseed(master, label) ^ mix(index))
}

/// Seeds a [`SeededRng`] from a 64-bit value.
pub fn seeded(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
