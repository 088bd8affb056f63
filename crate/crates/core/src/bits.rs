//! Packed bit strings with explicit bit length.
//!
//! Keys, pads, permutation encodings, and serialized diff-time-tags are all
//! bit strings whose lengths are generally not byte multiples. Bits are
//! stored most-significant-first within each byte and any unused bits of the
//! final byte are kept zero, so equality and byte export are canonical.

use std::fmt;

use rand::Rng;

/// A bit string of arbitrary length, MSB-first within each byte.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            len: 0,
        }
    }

    /// Wraps whole bytes; the length is `8 * bytes.len()`.
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let len = bytes.len() * 8;
        Self { bytes, len }
    }

    /// Zero-filled string of `len` bits.
    pub fn zeros(len: usize) -> Self {
        Self {
            bytes: vec![0u8; len.div_ceil(8)],
            len,
        }
    }

    /// Uniformly random string of `len` bits.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut bytes = vec![0u8; len.div_ceil(8)];
        rng.fill(bytes.as_mut_slice());
        let mut s = Self { bytes, len };
        s.clear_tail();
        s
    }

    /// Parses a hex string (whitespace ignored) into a byte-aligned bit string.
    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        Ok(Self::from_bytes(hex::decode(compact)?))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Underlying bytes; trailing bits past `len` are zero.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit(&self, index: usize) -> bool {
        assert!(index < self.len, "bit index {index} out of range {}", self.len);
        self.bytes[index / 8] >> (7 - index % 8) & 1 == 1
    }

    pub fn set_bit(&mut self, index: usize, value: bool) {
        assert!(index < self.len, "bit index {index} out of range {}", self.len);
        let mask = 1u8 << (7 - index % 8);
        if value {
            self.bytes[index / 8] |= mask;
        } else {
            self.bytes[index / 8] &= !mask;
        }
    }

    pub fn flip_bit(&mut self, index: usize) {
        let v = self.bit(index);
        self.set_bit(index, !v);
    }

    pub fn push_bit(&mut self, value: bool) {
        if self.len % 8 == 0 {
            self.bytes.push(0);
        }
        if value {
            self.bytes[self.len / 8] |= 1 << (7 - self.len % 8);
        }
        self.len += 1;
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn push_uint(&mut self, value: u64, width: usize) {
        assert!(width <= 64);
        for i in (0..width).rev() {
            self.push_bit(value >> i & 1 == 1);
        }
    }

    /// Reads `width` bits starting at `offset` as an unsigned integer.
    pub fn read_uint(&self, offset: usize, width: usize) -> u64 {
        assert!(width <= 64);
        assert!(offset + width <= self.len, "read past end of bit string");
        let mut v = 0u64;
        for i in 0..width {
            v = v << 1 | u64::from(self.bit(offset + i));
        }
        v
    }

    pub fn extend(&mut self, other: &BitString) {
        // Byte-aligned fast path; the bit loop is fine elsewhere.
        if self.len % 8 == 0 {
            self.bytes.extend_from_slice(&other.bytes);
            self.len += other.len;
            return;
        }
        for i in 0..other.len {
            self.push_bit(other.bit(i));
        }
    }

    /// Copies bits `[start, start + len)` into a new string.
    pub fn slice(&self, start: usize, len: usize) -> BitString {
        assert!(start + len <= self.len, "slice past end of bit string");
        let mut out = BitString::with_capacity(len);
        for i in 0..len {
            out.push_bit(self.bit(start + i));
        }
        out
    }

    /// Bitwise XOR with an equal-length string.
    pub fn xor(&self, other: &BitString) -> BitString {
        assert_eq!(self.len, other.len, "xor operands must have equal length");
        let bytes = self
            .bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| a ^ b)
            .collect();
        BitString {
            bytes,
            len: self.len,
        }
    }

    /// Truncates to `len` bits, zeroing the freed tail.
    pub fn truncate(&mut self, len: usize) {
        assert!(len <= self.len);
        self.len = len;
        self.bytes.truncate(len.div_ceil(8));
        self.clear_tail();
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 8;
        if rem != 0 {
            if let Some(last) = self.bytes.last_mut() {
                *last &= 0xffu8 << (8 - rem);
            }
        }
    }

    /// "0101…" form, handy for forced-encoding assertions.
    pub fn to_bin_string(&self) -> String {
        (0..self.len)
            .map(|i| if self.bit(i) { '1' } else { '0' })
            .collect()
    }

    pub fn from_bin_str(s: &str) -> Self {
        let mut out = BitString::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '0' => out.push_bit(false),
                '1' => out.push_bit(true),
                c if c.is_whitespace() => {}
                c => panic!("invalid bit character {c:?}"),
            }
        }
        out
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "BitString[{}]({})", self.len, self.to_bin_string())
        } else {
            write!(f, "BitString[{}]({}…)", self.len, self.slice(0, 64).to_bin_string())
        }
    }
}
