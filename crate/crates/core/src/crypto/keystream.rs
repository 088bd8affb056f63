//! Keystream generation for the cascade ciphers.
//!
//! AES-256 runs in counter mode over a 12-byte nonce and a 32-bit block
//! counter. Ascon-128 keystream is drawn from the cipher's initialized
//! sponge: initialize with IV, key, and nonce, absorb no associated data,
//! then squeeze the rate word between 6-round permutations — byte for byte
//! the keystream Ascon-128 would XOR into a plaintext.

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes256;
use ascon::State;

use crate::bits::BitString;

/// AES-256-CTR keystream of `n_bits`.
pub fn aes256_ctr_keystream(key: &[u8; 32], nonce: &[u8; 12], n_bits: usize) -> BitString {
    let cipher = Aes256::new(GenericArray::from_slice(key));
    let n_bytes = n_bits.div_ceil(8);
    let mut bytes = Vec::with_capacity(n_bytes + 16);
    let mut counter: u32 = 0;
    while bytes.len() < n_bytes {
        let mut block = [0u8; 16];
        block[..12].copy_from_slice(nonce);
        block[12..].copy_from_slice(&counter.to_be_bytes());
        let mut ga = GenericArray::from(block);
        cipher.encrypt_block(&mut ga);
        bytes.extend_from_slice(&ga);
        counter = counter.wrapping_add(1);
    }
    bytes.truncate(n_bytes);
    let mut bits = BitString::from_bytes(bytes);
    bits.truncate(n_bits);
    bits
}

/// Ascon-128 initialization vector (k = 128, r = 64, a = 12, b = 6).
const ASCON128_IV: u64 = 0x8040_0c06_0000_0000;

/// Ascon-128 keystream of `n_bits` for a 16-byte key and nonce.
///
/// The 12-byte nonce is zero-extended to the cipher's 128-bit nonce.
pub fn ascon128_keystream(key: &[u8; 16], nonce: &[u8; 12], n_bits: usize) -> BitString {
    let mut nonce16 = [0u8; 16];
    nonce16[..12].copy_from_slice(nonce);
    ascon128_keystream_nonce16(key, &nonce16, n_bits)
}

pub(crate) fn ascon128_keystream_nonce16(key: &[u8; 16], nonce: &[u8; 16], n_bits: usize) -> BitString {
    let k0 = u64::from_be_bytes(key[..8].try_into().unwrap());
    let k1 = u64::from_be_bytes(key[8..].try_into().unwrap());
    let n0 = u64::from_be_bytes(nonce[..8].try_into().unwrap());
    let n1 = u64::from_be_bytes(nonce[8..].try_into().unwrap());

    let mut state = State::new(ASCON128_IV, k0, k1, n0, n1);
    state.permute_12();
    state[3] ^= k0;
    state[4] ^= k1;
    // Domain separation after the (empty) associated-data phase.
    state[4] ^= 1;

    let n_bytes = n_bits.div_ceil(8);
    let mut bytes = Vec::with_capacity(n_bytes + 8);
    while bytes.len() < n_bytes {
        bytes.extend_from_slice(&state[0].to_be_bytes());
        state.permute_6();
    }
    bytes.truncate(n_bytes);
    let mut bits = BitString::from_bytes(bytes);
    bits.truncate(n_bits);
    bits
}
