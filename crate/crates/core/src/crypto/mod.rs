//! One-time pad, the obfuscated two-cipher cascade, and the
//! information-theoretic MAC.
//!
//! Both cascade ciphers run as length-preserving keystream XORs so any
//! instruction sequence is invertible step by step and ciphertext length
//! always equals plaintext length, which the key-budget accounting relies
//! on. Per-step keystream nonces are domain-separated by session, field,
//! and step index, so no two steps ever cancel.

mod keystream;
mod mac;

pub use keystream::{aes256_ctr_keystream, ascon128_keystream};
pub use mac::{wc_mac, wc_verify, MacKeys, MAC_TAG_BITS, MERSENNE_P};

use thiserror::Error;

use crate::bits::BitString;

#[derive(Debug, Error, PartialEq)]
pub enum CryptoError {
    #[error("pad length {pad} does not match data length {data}")]
    PadLengthMismatch { data: usize, pad: usize },
}

/// One-time pad: bitwise XOR with a never-reused pad of equal length.
pub fn otp(data: &BitString, pad: &BitString) -> Result<BitString, CryptoError> {
    if data.len() != pad.len() {
        return Err(CryptoError::PadLengthMismatch { data: data.len(), pad: pad.len() });
    }
    Ok(data.xor(pad))
}

/// The two cascade ciphers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CipherKind {
    Aes,
    Ascon,
}

/// An ordered cipher cascade selected by a 2-bit code.
///
/// The four possibilities are fixed:
/// `00 -> (ASCON, AES)`, `01 -> (AES, ASCON)`,
/// `10 -> (AES, ASCON, AES)`, `11 -> (ASCON, AES, ASCON)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstructionSequence {
    code: u8,
}

impl InstructionSequence {
    pub const COUNT: u8 = 4;

    pub fn from_code(code: u8) -> Self {
        assert!(code < Self::COUNT, "instruction sequence code must be 2 bits");
        Self { code }
    }

    pub fn code(self) -> u8 {
        self.code
    }

    pub fn steps(self) -> &'static [CipherKind] {
        use CipherKind::{Aes, Ascon};
        match self.code {
            0b00 => &[Ascon, Aes],
            0b01 => &[Aes, Ascon],
            0b10 => &[Aes, Ascon, Aes],
            0b11 => &[Ascon, Aes, Ascon],
            _ => unreachable!(),
        }
    }
}

/// Packs the IS code as 2 bits.
pub fn encode_is(is: InstructionSequence) -> BitString {
    let mut bits = BitString::with_capacity(2);
    bits.push_uint(u64::from(is.code), 2);
    bits
}

/// Inverse of [`encode_is`]; the 2-bit domain is total.
pub fn decode_is(bits: &BitString) -> InstructionSequence {
    assert_eq!(bits.len(), 2, "instruction sequence code is exactly 2 bits");
    InstructionSequence::from_code(bits.read_uint(0, 2) as u8)
}

/// Key material for the cascade: a 256-bit AES seed (from QKD) and the
/// 128-bit PQC seed for Ascon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CascadeKeys {
    pub aes_key: [u8; 32],
    pub ascon_key: [u8; 16],
}

/// Keystream nonce domains. Field separation keeps streams distinct when
/// several message fields are ciphered under one seed in one session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    CascadeDiffs,
    T1Pad,
    RhoPad,
    PiPad,
    MacK1Pad,
    MacK2Pad,
    AesSeedPad,
}

impl StreamDomain {
    fn tag(self) -> u8 {
        match self {
            StreamDomain::CascadeDiffs => 1,
            StreamDomain::T1Pad => 2,
            StreamDomain::RhoPad => 3,
            StreamDomain::PiPad => 4,
            StreamDomain::MacK1Pad => 5,
            StreamDomain::MacK2Pad => 6,
            StreamDomain::AesSeedPad => 7,
        }
    }
}

/// 12-byte keystream nonce: marker, field domain, session id, step index.
fn stream_nonce(session_id: u32, domain: StreamDomain, step: u8) -> [u8; 12] {
    let mut nonce = [0u8; 12];
    nonce[0] = 0xc5;
    nonce[1] = domain.tag();
    nonce[2..6].copy_from_slice(&session_id.to_be_bytes());
    nonce[6] = step;
    nonce
}

fn step_keystream(
    kind: CipherKind,
    keys: &CascadeKeys,
    session_id: u32,
    domain: StreamDomain,
    step: u8,
    n_bits: usize,
) -> BitString {
    let nonce = stream_nonce(session_id, domain, step);
    match kind {
        CipherKind::Aes => aes256_ctr_keystream(&keys.aes_key, &nonce, n_bits),
        CipherKind::Ascon => ascon128_keystream(&keys.ascon_key, &nonce, n_bits),
    }
}

/// Applies the instruction sequence in order; zero-length data passes
/// through unchanged.
pub fn cascade_encrypt(
    data: &BitString,
    is: InstructionSequence,
    keys: &CascadeKeys,
    session_id: u32,
    domain: StreamDomain,
) -> BitString {
    let mut out = data.clone();
    for (step, &kind) in is.steps().iter().enumerate() {
        let ks = step_keystream(kind, keys, session_id, domain, step as u8, out.len());
        out = out.xor(&ks);
    }
    out
}

/// Applies the inverse steps in reverse order.
pub fn cascade_decrypt(
    data: &BitString,
    is: InstructionSequence,
    keys: &CascadeKeys,
    session_id: u32,
    domain: StreamDomain,
) -> BitString {
    let mut out = data.clone();
    for (step, &kind) in is.steps().iter().enumerate().rev() {
        let ks = step_keystream(kind, keys, session_id, domain, step as u8, out.len());
        out = out.xor(&ks);
    }
    out
}

/// Pad material derived from the PQC seed alone, for the degraded mode in
/// which both the QKD and PSK reservoirs are exhausted and the system runs
/// every purpose off the PQC keys.
pub fn pqc_pad(pqc_seed: &[u8; 16], session_id: u32, domain: StreamDomain, n_bits: usize) -> BitString {
    ascon128_keystream(pqc_seed, &stream_nonce(session_id, domain, 0xff), n_bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn test_keys() -> CascadeKeys {
        CascadeKeys { aes_key: [0x42; 32], ascon_key: [0x24; 16] }
    }

    #[test]
    fn otp_involution_identity_and_forced_value() {
        let x = BitString::from_bin_str("1010");
        let p = BitString::from_bin_str("0110");
        assert_eq!(otp(&x, &p).unwrap().to_bin_string(), "1100");
        assert_eq!(otp(&otp(&x, &p).unwrap(), &p).unwrap(), x);
        assert_eq!(otp(&x, &BitString::zeros(4)).unwrap(), x);
        assert_eq!(
            otp(&x, &BitString::zeros(5)),
            Err(CryptoError::PadLengthMismatch { data: 4, pad: 5 })
        );
    }

    #[test]
    fn is_code_table() {
        use CipherKind::{Aes, Ascon};
        assert_eq!(InstructionSequence::from_code(0b00).steps(), &[Ascon, Aes]);
        assert_eq!(InstructionSequence::from_code(0b01).steps(), &[Aes, Ascon]);
        assert_eq!(InstructionSequence::from_code(0b10).steps(), &[Aes, Ascon, Aes]);
        assert_eq!(InstructionSequence::from_code(0b11).steps(), &[Ascon, Aes, Ascon]);
        for code in 0..InstructionSequence::COUNT {
            let is = InstructionSequence::from_code(code);
            assert_eq!(decode_is(&encode_is(is)), is);
        }
    }

    #[test]
    fn cascade_roundtrip_all_codes() {
        let mut rng = seeded(8);
        let keys = test_keys();
        for code in 0..4 {
            let is = InstructionSequence::from_code(code);
            let data = BitString::random(1003, &mut rng);
            let ct = cascade_encrypt(&data, is, &keys, 11, StreamDomain::CascadeDiffs);
            assert_eq!(ct.len(), data.len());
            assert_ne!(ct, data);
            let pt = cascade_decrypt(&ct, is, &keys, 11, StreamDomain::CascadeDiffs);
            assert_eq!(pt, data);
        }
        // Zero-length data passes through unchanged.
        let empty = BitString::new();
        let is = InstructionSequence::from_code(2);
        assert_eq!(cascade_encrypt(&empty, is, &keys, 1, StreamDomain::CascadeDiffs), empty);
    }

    /// Repeated-cipher sequences (codes 10 and 11) must not cancel: the
    /// step-indexed nonces keep the two keystreams of the same cipher
    /// distinct.
    #[test]
    fn repeated_steps_never_cancel() {
        let mut rng = seeded(9);
        for _ in 0..1000 {
            let session: u32 = rand::Rng::random(&mut rng);
            let mut aes_key = [0u8; 32];
            let mut ascon_key = [0u8; 16];
            rand::Rng::fill(&mut rng, &mut aes_key[..]);
            rand::Rng::fill(&mut rng, &mut ascon_key[..]);
            let keys = CascadeKeys { aes_key, ascon_key };
            let first = step_keystream(CipherKind::Aes, &keys, session, StreamDomain::CascadeDiffs, 0, 128);
            let third = step_keystream(CipherKind::Aes, &keys, session, StreamDomain::CascadeDiffs, 2, 128);
            assert_ne!(first, third);
            let a0 = step_keystream(CipherKind::Ascon, &keys, session, StreamDomain::CascadeDiffs, 0, 128);
            let a2 = step_keystream(CipherKind::Ascon, &keys, session, StreamDomain::CascadeDiffs, 2, 128);
            assert_ne!(a0, a2);
        }
    }

    #[test]
    fn three_step_code_differs_from_partial_application() {
        let keys = test_keys();
        let is3 = InstructionSequence::from_code(0b10);
        assert_eq!(is3.steps().len(), 3);
        let data = BitString::random(256, &mut seeded(10));
        let full = cascade_encrypt(&data, is3, &keys, 5, StreamDomain::CascadeDiffs);
        let two = cascade_encrypt(&data, InstructionSequence::from_code(0b01), &keys, 5, StreamDomain::CascadeDiffs);
        assert_ne!(full, two);
    }
}
