//! Shared helpers for integration tests.

use qstt_core::bits::BitString;
use qstt_core::keystore::KeyPool;
use qstt_core::rng::{seeded, SeededRng};
use qstt_core::timebase::TimeTagArray;
use rand::Rng;

/// Strictly increasing grid-aligned tags whose gaps all fit in `b` bits,
/// with a microsecond-aligned duration.
pub fn synthetic_tags(rng: &mut SeededRng, n: usize, tick: i64, b: u32) -> TimeTagArray {
    let mut t = rng.random_range(0..1_000_000i64 / tick.max(1)) * tick;
    let mut tags = vec![t];
    for _ in 1..n {
        t += rng.random_range(1..1u64 << b) as i64 * tick;
        tags.push(t);
    }
    let duration_ps = (t / 1_000_000 + 1) * 1_000_000;
    TimeTagArray { tags_ps: tags, duration_ps }
}

/// A pool holding `qkd_bits` deposited before session 1 plus `psk_bits`,
/// positioned at session 1.
pub fn reference_pool(seed: u64, qkd_bits: usize, psk_bits: usize) -> KeyPool {
    let mut rng = seeded(seed);
    let mut pqc = [0u8; 16];
    rng.fill(&mut pqc[..]);
    let mut pool = KeyPool::new(BitString::random(psk_bits, &mut rng), pqc);
    if qkd_bits > 0 {
        pool.deposit_qkd(&BitString::random(qkd_bits, &mut rng), 0).unwrap();
    }
    pool.begin_session(1);
    pool
}
