//! Wegman-Carter message authentication.
//!
//! `tag = H_k1(message) XOR k2` where `H_k1` is polynomial evaluation over
//! the Mersenne prime `p = 2^61 - 1` and `k2` is a fresh 61-bit pad per
//! message. The message splits into 61-bit blocks `m_1..m_s` (the last block
//! zero-padded on the right) followed by a block holding the message bit
//! length, so no two messages of different lengths share a block sequence.
//! Hash value: `sum_i m_i * k1^(s-i+1) mod p`.

use crate::bits::BitString;

/// Tag length `l` in bits.
pub const MAC_TAG_BITS: u32 = 61;

/// The Mersenne prime `2^61 - 1`.
pub const MERSENNE_P: u64 = (1 << 61) - 1;

const MASK61: u64 = (1 << 61) - 1;

/// Hash key `k1` (fixed per deployment) and fresh pad `k2` (per message).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacKeys {
    k1: u64,
    k2: u64,
}

impl MacKeys {
    /// Builds keys from raw 61-bit draws; `k1` is reduced into the field.
    pub fn new(k1_raw: u64, k2_raw: u64) -> Self {
        Self { k1: (k1_raw & MASK61) % MERSENNE_P, k2: k2_raw & MASK61 }
    }

    pub fn k1(&self) -> u64 {
        self.k1
    }
}

fn mul_mod_p(a: u64, b: u64) -> u64 {
    let t = u128::from(a) * u128::from(b);
    let folded = (t & u128::from(MERSENNE_P)) + (t >> 61);
    let folded = (folded & u128::from(MERSENNE_P)) + (folded >> 61);
    let r = folded as u64;
    if r >= MERSENNE_P {
        r - MERSENNE_P
    } else {
        r
    }
}

fn add_mod_p(a: u64, b: u64) -> u64 {
    let s = a + b; // both < 2^61, no overflow
    if s >= MERSENNE_P {
        s - MERSENNE_P
    } else {
        s
    }
}

/// Message blocks: 61-bit chunks MSB-first, last chunk zero-padded on the
/// right, then the bit length as a final block.
fn blocks(message: &BitString) -> impl Iterator<Item = u64> + '_ {
    let width = MAC_TAG_BITS as usize;
    let full = message.len() / width;
    let rem = message.len() % width;
    (0..full)
        .map(move |i| message.read_uint(i * width, width))
        .chain((rem > 0).then(|| message.read_uint(full * width, rem) << (width - rem)))
        .chain(std::iter::once(message.len() as u64))
}

fn poly_hash(message: &BitString, k1: u64) -> u64 {
    let mut h = 0u64;
    for block in blocks(message) {
        h = add_mod_p(mul_mod_p(h, k1), block % MERSENNE_P);
    }
    // Horner leaves the last block at k1^0; one more multiply gives
    // sum m_i * k1^(s'-i+1) with every block keyed.
    mul_mod_p(h, k1)
}

/// Computes the 61-bit tag for a message.
pub fn wc_mac(message: &BitString, keys: &MacKeys) -> u64 {
    poly_hash(message, keys.k1) ^ keys.k2
}

/// Recomputes and compares the tag.
pub fn wc_verify(message: &BitString, tag: u64, keys: &MacKeys) -> bool {
    wc_mac(message, keys) == tag
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn zero_hash_key_makes_tag_equal_k2() {
        let keys = MacKeys::new(0, 0x1234_5678_9abc_def);
        let msg = BitString::from_bytes(vec![0xab; 37]);
        assert_eq!(wc_mac(&msg, &keys), 0x1234_5678_9abc_def & MASK61);
        let empty = BitString::new();
        assert_eq!(wc_mac(&empty, &MacKeys::new(12345, 777)), 777);
    }

    #[test]
    fn tag_always_61_bits() {
        let mut rng = seeded(14);
        for _ in 0..200 {
            let len = rng.random_range(0..600usize);
            let msg = BitString::random(len, &mut rng);
            let keys = MacKeys::new(rng.random(), rng.random());
            assert!(wc_mac(&msg, &keys) < 1 << 61);
        }
    }

    #[test]
    fn single_bit_flips_are_rejected() {
        let mut rng = seeded(15);
        for _ in 0..1000 {
            let len = rng.random_range(1..400usize);
            let msg = BitString::random(len, &mut rng);
            let keys = MacKeys::new(rng.random(), rng.random());
            let tag = wc_mac(&msg, &keys);
            assert!(wc_verify(&msg, tag, &keys));
            let mut tampered = msg.clone();
            tampered.flip_bit(rng.random_range(0..len));
            assert!(!wc_verify(&tampered, tag, &keys), "flip accepted at len {len}");
        }
    }

    #[test]
    fn length_extension_blocked_by_length_block() {
        // Same leading bits, different lengths: the length block separates
        // a message from its zero-extension.
        let keys = MacKeys::new(0xdead_beef, 0);
        let short = BitString::from_bin_str("1011");
        let mut long = short.clone();
        long.push_uint(0, 57); // same first block after padding
        assert_ne!(wc_mac(&short, &keys), wc_mac(&long, &keys));
    }

    #[test]
    fn collision_rate_statistically_negligible() {
        let mut rng = seeded(16);
        for _ in 0..2000 {
            let keys = MacKeys::new(rng.random(), 0);
            let a = BitString::random(122, &mut rng);
            let b = BitString::random(122, &mut rng);
            if a != b {
                assert_ne!(wc_mac(&a, &keys), wc_mac(&b, &keys));
            }
        }
    }

    #[test]
    fn field_arithmetic_reduces() {
        assert_eq!(mul_mod_p(MERSENNE_P - 1, MERSENNE_P - 1), 1);
        assert_eq!(mul_mod_p(MERSENNE_P, 5), 0);
        assert_eq!(add_mod_p(MERSENNE_P - 1, 1), 0);
    }
}
