//! The secure timing message: construction, inversion, and wire format.
//!
//! A sender turns a time-tag array into diff-time-tags, one-time-pads the
//! first stamp `t1` and the permutation ρ, shuffles the partitioned diffs,
//! one-time-pads a budget-limited random subset `Q` of them, runs the rest
//! through the obfuscated cipher cascade selected by an encrypted
//! instruction-sequence code π, and tags the result with a Wegman-Carter
//! MAC. The receiver holds mirrored key pools, draws the same key material
//! in the same order, verifies the MAC before touching any field, and
//! inverts the pipeline exactly.
//!
//! `Q` indexes positions in the *shuffled* diff array and is sorted
//! ascending on the wire to keep the encoding canonical.

use rand::seq::index::sample as index_sample;
use rand::Rng;
use thiserror::Error;

use crate::bits::BitString;
use crate::codec::{
    self, decode_rho, encode_rho, from_diffs, partition, sample_permutation, serialize_diffs,
    to_diffs, CodecError,
};
use crate::crypto::{
    cascade_decrypt, cascade_encrypt, otp, pqc_pad, wc_mac, wc_verify, CascadeKeys, CryptoError,
    InstructionSequence, MacKeys, StreamDomain,
};
use crate::keystore::{BudgetParams, FallbackDecision, KeyPool, KeystoreError, PoolId, Purpose};
use crate::rng::seeded;
use crate::timebase::TimeTagArray;

pub const WIRE_MAGIC: [u8; 4] = *b"QSTT";
pub const WIRE_VERSION: u8 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("bad magic {found:02x?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u8),
    #[error("buffer truncated: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("length mismatch: expected {expected} bytes for {field}, got {got}")]
    LengthMismatch { field: &'static str, expected: usize, got: usize },
    #[error("invalid field {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("tag array is empty")]
    EmptyTags,
    #[error("run duration {duration_ps} ps is not a whole number of microseconds")]
    UnalignedDuration { duration_ps: i64 },
    #[error("unsupported parameters: {reason}")]
    UnsupportedParams { reason: String },
    #[error("MAC verification failed; message rejected before decryption")]
    MacFailure,
    #[error("decrypted instruction-sequence byte is out of range (key pools desynchronized?)")]
    CorruptInstructionSequence,
    #[error("field {field}: expected {expected} entries, got {got}")]
    LengthInconsistency { field: &'static str, expected: u64, got: u64 },
    #[error("reconstructed diff at index {index} is zero; pads desynchronized or message forged")]
    ReconstructionMismatch { index: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Key(#[from] KeystoreError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// What the MAC covers. The default authenticates the entire wire payload;
/// the strict mode covers only `(t1*, ΔT_enc, ΔT_enc_IS)`, leaving ρ*, Q,
/// and π outside the tag — kept as an option for comparison runs since an
/// unauthenticated Q or ρ* invites trivial desynchronization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MacScope {
    #[default]
    FullMessage,
    TimingOnly,
}

/// Per-session protocol parameters on top of the key budget.
#[derive(Debug, Clone)]
pub struct SessionParams {
    pub budget: BudgetParams,
    pub codec_tick_ps: i64,
    /// Requested `|Q|`; `None` asks for the budget maximum.
    pub q_target: Option<u64>,
    pub mac_scope: MacScope,
}

impl SessionParams {
    pub fn new(budget: BudgetParams, codec_tick_ps: i64) -> Self {
        Self { budget, codec_tick_ps, q_target: None, mac_scope: MacScope::FullMessage }
    }
}

/// How the session's key material was sourced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncryptionMode {
    /// QKD/PSK reservoirs in use (possibly with policy fallbacks).
    Full,
    /// Both reservoirs exhausted: every purpose served from the PQC seed,
    /// no information-theoretic layer, `Q` forced to zero.
    PqcOnly,
}

/// The wire artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecureTimingMessage {
    pub version: u8,
    pub session_id: u32,
    pub duration_us: u64,
    pub n: u32,
    pub k: u32,
    pub b: u32,
    pub codec_tick_ps: i64,
    /// OTP-encrypted first stamp, 64 bits.
    pub t1_star: u64,
    /// OTP-encrypted permutation, exactly `k * 2^k` bits.
    pub rho_star: BitString,
    /// Sorted, zero-based positions into the shuffled diff array.
    pub q_indices: Vec<u32>,
    /// Encrypted 2-bit instruction-sequence code, padded to one byte.
    pub pi: u8,
    /// OTP ciphertext of the `Q` diff fields, `b * |Q|` bits.
    pub dt_enc: BitString,
    /// Cascade ciphertext of the remaining fields, `b * (n-1-|Q|)` bits.
    pub dt_enc_is: BitString,
    /// 61-bit Wegman-Carter tag.
    pub mac_tag: u64,
}

impl SecureTimingMessage {
    pub fn q_len(&self) -> u64 {
        self.q_indices.len() as u64
    }
}

/// Result of building one session's message.
#[derive(Debug, Clone)]
pub struct EncryptedSession {
    pub message: SecureTimingMessage,
    pub mode: EncryptionMode,
    pub q_requested: u64,
    pub q_effective: u64,
    /// The budget numerator was negative; the session ran with `Q = ∅`.
    pub budget_infeasible: bool,
}

/// Key material shared by the encrypt and decrypt sides of one session.
///
/// Both sides execute the same draws in the same order (ρ pad, t1 pad, MAC
/// `k2`, AES seed, π pad, then the `Q` pad), so mirrored pools stay aligned.
struct SessionKeys {
    mode: EncryptionMode,
    rho_pad: BitString,
    t1_pad: u64,
    mac: MacKeys,
    cascade: CascadeKeys,
    pi_pad: u8,
}

fn pqc_only_keys(pqc_seed: &[u8; 16], session_id: u32, rho_bits: u64) -> SessionKeys {
    let aes_bits = pqc_pad(pqc_seed, session_id, StreamDomain::AesSeedPad, 256);
    let mut aes_key = [0u8; 32];
    aes_key.copy_from_slice(aes_bits.as_bytes());
    SessionKeys {
        mode: EncryptionMode::PqcOnly,
        rho_pad: pqc_pad(pqc_seed, session_id, StreamDomain::RhoPad, rho_bits as usize),
        t1_pad: pqc_pad(pqc_seed, session_id, StreamDomain::T1Pad, 64).read_uint(0, 64),
        mac: MacKeys::new(
            pqc_pad(pqc_seed, session_id, StreamDomain::MacK1Pad, 61).read_uint(0, 61),
            pqc_pad(pqc_seed, session_id, StreamDomain::MacK2Pad, 61).read_uint(0, 61),
        ),
        cascade: CascadeKeys { aes_key, ascon_key: *pqc_seed },
        pi_pad: pqc_pad(pqc_seed, session_id, StreamDomain::PiPad, 8).as_bytes()[0],
    }
}

/// Draws the session's fixed key material, applying the fallback policy.
/// A downgrade decision at any point switches the whole session to PQC-only
/// mode; an unavailable timing-data key is an error.
fn acquire_session_keys(pools: &mut KeyPool, k: u32) -> Result<SessionKeys, ProtocolError> {
    let session_id = pools.current_session();
    let rho_bits = u64::from(k) * (1u64 << k);
    let pqc_seed = pools.pqc_seed();

    if pools.available(PoolId::Qkd) == 0 && pools.available(PoolId::Psk) == 0 {
        return Ok(pqc_only_keys(&pqc_seed, session_id, rho_bits));
    }

    let mut draw = |purpose: Purpose, bits: u64| -> Result<Option<BitString>, ProtocolError> {
        if bits == 0 {
            return Ok(Some(BitString::new()));
        }
        match pools.draw_for_purpose(purpose, bits) {
            Ok((bits, _)) => Ok(Some(bits)),
            Err(KeystoreError::Exhausted { fallback: FallbackDecision::Downgrade, .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    };

    let Some(rho_pad) = draw(Purpose::RhoOtp, rho_bits)? else {
        return Ok(pqc_only_keys(&pqc_seed, session_id, rho_bits));
    };
    let Some(t1_pad) = draw(Purpose::T1Otp, 64)? else {
        return Ok(pqc_only_keys(&pqc_seed, session_id, rho_bits));
    };
    let Some(k2) = draw(Purpose::MacK2, 61)? else {
        return Ok(pqc_only_keys(&pqc_seed, session_id, rho_bits));
    };
    let Some(aes_bits) = draw(Purpose::AesSeed, 256)? else {
        return Ok(pqc_only_keys(&pqc_seed, session_id, rho_bits));
    };
    let Some(pi_pad) = draw(Purpose::IsOtp, 8)? else {
        return Ok(pqc_only_keys(&pqc_seed, session_id, rho_bits));
    };
    let k1 = pools.mac_hash_key()?;

    let mut aes_key = [0u8; 32];
    aes_key.copy_from_slice(aes_bits.as_bytes());
    Ok(SessionKeys {
        mode: EncryptionMode::Full,
        rho_pad,
        t1_pad: t1_pad.read_uint(0, 64),
        mac: MacKeys::new(k1, k2.read_uint(0, 61)),
        cascade: CascadeKeys { aes_key, ascon_key: pqc_seed },
        pi_pad: pi_pad.as_bytes()[0],
    })
}

fn acquire_q_pad(
    pools: &mut KeyPool,
    mode: EncryptionMode,
    q_bits: u64,
) -> Result<BitString, ProtocolError> {
    match mode {
        EncryptionMode::PqcOnly => Ok(BitString::new()),
        EncryptionMode::Full if q_bits == 0 => Ok(BitString::new()),
        EncryptionMode::Full => Ok(pools.draw_for_purpose(Purpose::DiffTagOtp, q_bits)?.0),
    }
}

fn validate_params(params: &SessionParams) -> Result<(), ProtocolError> {
    params.budget.validate()?;
    let unsupported = |reason: String| ProtocolError::UnsupportedParams { reason };
    if params.budget.t1_bits != 64 {
        return Err(unsupported(format!(
            "t1 stamp is 64 bits on the wire, got {}",
            params.budget.t1_bits
        )));
    }
    if params.budget.mac_len != 61 {
        return Err(unsupported(format!(
            "MAC tag is 61 bits on the wire, got {}",
            params.budget.mac_len
        )));
    }
    if params.budget.aes_seed_bits != 256 {
        return Err(unsupported(format!(
            "AES-256 takes a 256-bit seed, got {}",
            params.budget.aes_seed_bits
        )));
    }
    if params.codec_tick_ps <= 0 {
        return Err(unsupported(format!(
            "codec tick must be positive, got {}",
            params.codec_tick_ps
        )));
    }
    Ok(())
}

fn mac_message(msg: &SecureTimingMessage, scope: MacScope) -> Result<BitString, ProtocolError> {
    match scope {
        MacScope::FullMessage => {
            let mut bytes = wire_encode(msg)?;
            bytes.truncate(bytes.len() - 8);
            Ok(BitString::from_bytes(bytes))
        }
        MacScope::TimingOnly => {
            let mut bits = BitString::with_capacity(64 + msg.dt_enc.len() + msg.dt_enc_is.len());
            bits.push_uint(msg.t1_star, 64);
            bits.extend(&msg.dt_enc);
            bits.extend(&msg.dt_enc_is);
            Ok(bits)
        }
    }
}

/// Builds the secure timing message for one session.
///
/// `|Q|` is the requested target capped by the budget maximum, the number
/// of diffs, and the bits actually drawable from the QKD reservoir; an
/// infeasible budget runs with `Q = ∅` rather than aborting.
pub fn encrypt_timing(
    tags: &TimeTagArray,
    pools: &mut KeyPool,
    params: &SessionParams,
    seed: u64,
) -> Result<EncryptedSession, ProtocolError> {
    validate_params(params)?;
    if tags.is_empty() {
        return Err(ProtocolError::EmptyTags);
    }
    if tags.duration_ps % 1_000_000 != 0 {
        return Err(ProtocolError::UnalignedDuration { duration_ps: tags.duration_ps });
    }
    let n = u32::try_from(tags.len()).map_err(|_| ProtocolError::UnsupportedParams {
        reason: format!("n = {} exceeds the 32-bit wire field", tags.len()),
    })?;

    let budget = &params.budget;
    let diff_array = to_diffs(tags, params.codec_tick_ps, budget.b)?;
    let session_id = pools.current_session();
    let mut rng = seeded(seed);

    let keys = acquire_session_keys(pools, budget.k)?;

    let rho = sample_permutation(budget.k, &mut rng)?;
    let rho_star = otp(&encode_rho(&rho), &keys.rho_pad)?;
    let shuffled = codec::shuffle(&partition(&diff_array.diffs, budget.k)?, &rho)?;

    let q_budget = budget.max_q();
    let q_requested = params.q_target.unwrap_or(q_budget.max_q);
    let q_effective = if keys.mode == EncryptionMode::PqcOnly {
        0
    } else {
        q_requested
            .min(q_budget.max_q)
            .min(diff_array.diffs.len() as u64)
            .min(pools.available(PoolId::Qkd) / u64::from(budget.b))
    };

    let mut q_indices: Vec<u32> = index_sample(&mut rng, shuffled.len(), q_effective as usize)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    q_indices.sort_unstable();

    let q_pad = acquire_q_pad(pools, keys.mode, u64::from(budget.b) * q_effective)?;
    let q_fields: Vec<u64> = q_indices.iter().map(|&i| shuffled[i as usize]).collect();
    let dt_enc = otp(&serialize_diffs(&q_fields, budget.b)?, &q_pad)?;

    let is = InstructionSequence::from_code(rng.random_range(0..4u8));
    let pi = is.code() ^ keys.pi_pad;
    let mut in_q = vec![false; shuffled.len()];
    for &i in &q_indices {
        in_q[i as usize] = true;
    }
    let non_q: Vec<u64> = shuffled
        .iter()
        .zip(&in_q)
        .filter_map(|(&d, &q)| (!q).then_some(d))
        .collect();
    let dt_enc_is = cascade_encrypt(
        &serialize_diffs(&non_q, budget.b)?,
        is,
        &keys.cascade,
        session_id,
        StreamDomain::CascadeDiffs,
    );

    let mut message = SecureTimingMessage {
        version: WIRE_VERSION,
        session_id,
        duration_us: (tags.duration_ps / 1_000_000) as u64,
        n,
        k: budget.k,
        b: budget.b,
        codec_tick_ps: params.codec_tick_ps,
        t1_star: (diff_array.t1_ps as u64) ^ keys.t1_pad,
        rho_star,
        q_indices,
        pi,
        dt_enc,
        dt_enc_is,
        mac_tag: 0,
    };
    message.mac_tag = wc_mac(&mac_message(&message, params.mac_scope)?, &keys.mac);

    Ok(EncryptedSession {
        message,
        mode: keys.mode,
        q_requested,
        q_effective,
        budget_infeasible: !q_budget.feasible,
    })
}

/// Inverts [`encrypt_timing`] on the receiving side.
///
/// The receiver's pools must mirror the sender's. Key material is drawn in
/// the sender's order, then the MAC is verified before any field is
/// decrypted; a bad tag rejects the message with nothing decrypted.
pub fn decrypt_timing(
    msg: &SecureTimingMessage,
    pools: &mut KeyPool,
    mac_scope: MacScope,
) -> Result<TimeTagArray, ProtocolError> {
    if msg.version != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion(msg.version).into());
    }
    let keys = acquire_session_keys(pools, msg.k)?;
    let q_pad = acquire_q_pad(pools, keys.mode, u64::from(msg.b) * msg.q_len())?;

    if !wc_verify(&mac_message(msg, mac_scope)?, msg.mac_tag, &keys.mac) {
        return Err(ProtocolError::MacFailure);
    }

    let pi_plain = msg.pi ^ keys.pi_pad;
    if pi_plain > 0b11 {
        return Err(ProtocolError::CorruptInstructionSequence);
    }
    let is = InstructionSequence::from_code(pi_plain);

    let non_q_bits = cascade_decrypt(
        &msg.dt_enc_is,
        is,
        &keys.cascade,
        msg.session_id,
        StreamDomain::CascadeDiffs,
    );
    let non_q = codec::deserialize_diffs(&non_q_bits, msg.b)?;
    let q_fields = codec::deserialize_diffs(&otp(&msg.dt_enc, &q_pad)?, msg.b)?;

    let n_diffs = (msg.n - 1) as usize;
    if non_q.len() + q_fields.len() != n_diffs {
        return Err(ProtocolError::LengthInconsistency {
            field: "diff fields",
            expected: n_diffs as u64,
            got: (non_q.len() + q_fields.len()) as u64,
        });
    }

    let mut in_q = vec![false; n_diffs];
    for &i in &msg.q_indices {
        in_q[i as usize] = true;
    }
    let mut q_iter = q_fields.into_iter();
    let mut non_q_iter = non_q.into_iter();
    let shuffled: Vec<u64> = in_q
        .iter()
        .map(|&q| if q { q_iter.next().unwrap() } else { non_q_iter.next().unwrap() })
        .collect();

    let rho = decode_rho(&otp(&msg.rho_star, &keys.rho_pad)?, msg.k)?;
    let diffs = codec::unshuffle(&shuffled, &rho)?;
    if let Some(index) = diffs.iter().position(|&d| d == 0) {
        return Err(ProtocolError::ReconstructionMismatch { index });
    }

    let t1_ps = (msg.t1_star ^ keys.t1_pad) as i64;
    Ok(from_diffs(&codec::DiffTagArray {
        t1_ps,
        diffs,
        codec_tick_ps: msg.codec_tick_ps,
        bits_per_diff: msg.b,
        duration_ps: msg.duration_us as i64 * 1_000_000,
    }))
}

fn bits_field_bytes(bits: u64) -> u64 {
    bits.div_ceil(8)
}

/// Serialized size in bytes for the given header values.
fn wire_size(n: u32, k: u32, b: u32, q: u64) -> u64 {
    let rho_bytes = bits_field_bytes(u64::from(k) * (1u64 << k));
    let dt_enc_bytes = bits_field_bytes(u64::from(b) * q);
    let dt_enc_is_bytes = bits_field_bytes(u64::from(b) * (u64::from(n) - 1 - q));
    35 + 8 + rho_bytes + 4 * q + 1 + dt_enc_bytes + dt_enc_is_bytes + 8
}

/// Encodes the message in the normative big-endian layout:
/// magic, version, session, T_run (µs), n, k, b, |Q|, codec tick, t1*,
/// ρ*, Q, π, dt_enc, dt_enc_is, MAC.
pub fn wire_encode(msg: &SecureTimingMessage) -> Result<Vec<u8>, WireError> {
    let check = |field: &'static str, expected: usize, got: usize| {
        if expected != got {
            Err(WireError::LengthMismatch { field, expected, got })
        } else {
            Ok(())
        }
    };
    if msg.n == 0 {
        return Err(WireError::InvalidField { field: "n", reason: "must be >= 1".into() });
    }
    let rho_bits = (u64::from(msg.k) * (1u64 << msg.k)) as usize;
    check("rho_star", rho_bits, msg.rho_star.len())?;
    check("dt_enc", msg.b as usize * msg.q_indices.len(), msg.dt_enc.len())?;
    let n_diffs = msg.n as usize - 1;
    check("dt_enc_is", msg.b as usize * (n_diffs - msg.q_indices.len()), msg.dt_enc_is.len())?;

    let mut out = Vec::with_capacity(wire_size(msg.n, msg.k, msg.b, msg.q_len()) as usize);
    out.extend_from_slice(&WIRE_MAGIC);
    out.push(msg.version);
    out.extend_from_slice(&msg.session_id.to_be_bytes());
    out.extend_from_slice(&msg.duration_us.to_be_bytes());
    out.extend_from_slice(&msg.n.to_be_bytes());
    out.push(msg.k as u8);
    out.push(msg.b as u8);
    out.extend_from_slice(&(msg.q_indices.len() as u32).to_be_bytes());
    out.extend_from_slice(&(msg.codec_tick_ps as u64).to_be_bytes());
    out.extend_from_slice(&msg.t1_star.to_be_bytes());
    out.extend_from_slice(msg.rho_star.as_bytes());
    for &q in &msg.q_indices {
        out.extend_from_slice(&q.to_be_bytes());
    }
    out.push(msg.pi);
    out.extend_from_slice(msg.dt_enc.as_bytes());
    out.extend_from_slice(msg.dt_enc_is.as_bytes());
    out.extend_from_slice(&msg.mac_tag.to_be_bytes());
    Ok(out)
}

/// Reads a bit field of `len_bits` from zero-padded bytes, rejecting
/// nonzero padding so every message has exactly one encoding.
fn bits_from_padded(bytes: &[u8], len_bits: usize, field: &'static str) -> Result<BitString, WireError> {
    let mut bits = BitString::from_bytes(bytes.to_vec());
    for i in len_bits..bits.len() {
        if bits.bit(i) {
            return Err(WireError::InvalidField { field, reason: "nonzero padding bits".into() });
        }
    }
    bits.truncate(len_bits);
    Ok(bits)
}

/// Decodes and validates a wire buffer.
pub fn wire_decode(buf: &[u8]) -> Result<SecureTimingMessage, WireError> {
    const FIXED_HEAD: usize = 35;
    if buf.len() < FIXED_HEAD {
        return Err(WireError::Truncated { needed: FIXED_HEAD, got: buf.len() });
    }
    let magic: [u8; 4] = buf[0..4].try_into().unwrap();
    if magic != WIRE_MAGIC {
        return Err(WireError::BadMagic { found: magic });
    }
    let version = buf[4];
    if version != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let be32 = |s: &[u8]| u32::from_be_bytes(s.try_into().unwrap());
    let be64 = |s: &[u8]| u64::from_be_bytes(s.try_into().unwrap());
    let session_id = be32(&buf[5..9]);
    let duration_us = be64(&buf[9..17]);
    let n = be32(&buf[17..21]);
    let k = u32::from(buf[21]);
    let b = u32::from(buf[22]);
    let q_len = be32(&buf[23..27]) as u64;
    let codec_tick = be64(&buf[27..35]);

    let invalid = |field: &'static str, reason: String| WireError::InvalidField { field, reason };
    if n == 0 {
        return Err(invalid("n", "message must cover at least one tag".into()));
    }
    if k > codec::MAX_PARTITION_EXPONENT {
        return Err(invalid("k", format!("partition exponent {k} out of range")));
    }
    if b == 0 || b > codec::MAX_DIFF_BITS {
        return Err(invalid("b", format!("diff width {b} out of range")));
    }
    if q_len > u64::from(n) - 1 {
        return Err(invalid("q", format!("|Q| = {q_len} exceeds n-1 = {}", n - 1)));
    }
    if codec_tick == 0 || codec_tick > i64::MAX as u64 {
        return Err(invalid("codec_tick_ps", format!("tick {codec_tick} out of range")));
    }

    let expected = wire_size(n, k, b, q_len);
    if (buf.len() as u64) < expected {
        return Err(WireError::Truncated { needed: expected as usize, got: buf.len() });
    }
    if buf.len() as u64 != expected {
        return Err(WireError::LengthMismatch {
            field: "message",
            expected: expected as usize,
            got: buf.len(),
        });
    }

    let mut pos = FIXED_HEAD;
    let mut take = |len: usize| {
        let s = &buf[pos..pos + len];
        pos += len;
        s
    };

    let t1_star = be64(take(8));
    let rho_bits = (u64::from(k) * (1u64 << k)) as usize;
    let rho_star = bits_from_padded(take(rho_bits.div_ceil(8)), rho_bits, "rho_star")?;

    let mut q_indices = Vec::with_capacity(q_len as usize);
    let mut prev: Option<u32> = None;
    for _ in 0..q_len {
        let q = be32(take(4));
        if q >= n - 1 {
            return Err(invalid("q", format!("index {q} out of range for n-1 = {}", n - 1)));
        }
        if prev.is_some_and(|p| q <= p) {
            return Err(invalid("q", "indices must be strictly increasing".into()));
        }
        prev = Some(q);
        q_indices.push(q);
    }

    let pi = take(1)[0];
    let dt_enc_bits = b as usize * q_len as usize;
    let dt_enc = bits_from_padded(take(dt_enc_bits.div_ceil(8)), dt_enc_bits, "dt_enc")?;
    let dt_enc_is_bits = b as usize * (n as usize - 1 - q_len as usize);
    let dt_enc_is = bits_from_padded(take(dt_enc_is_bits.div_ceil(8)), dt_enc_is_bits, "dt_enc_is")?;
    let mac_tag = be64(take(8));
    if mac_tag >> 61 != 0 {
        return Err(invalid("mac", "top 3 bits of the tag field must be zero".into()));
    }

    Ok(SecureTimingMessage {
        version,
        session_id,
        duration_us,
        n,
        k,
        b,
        codec_tick_ps: codec_tick as i64,
        t1_star,
        rho_star,
        q_indices,
        pi,
        dt_enc,
        dt_enc_is,
        mac_tag,
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::Rng;

    /// Strictly increasing grid-aligned tags whose gaps all fit in `b` bits.
    pub fn synthetic_tags(rng: &mut crate::rng::SeededRng, n: usize, tick: i64, b: u32) -> TimeTagArray {
        let mut t = rng.random_range(0..1_000_000i64 / tick.max(1)) * tick;
        let mut tags = vec![t];
        for _ in 1..n {
            t += rng.random_range(1..1u64 << b) as i64 * tick;
            tags.push(t);
        }
        let duration_ps = (t / 1_000_000 + 1) * 1_000_000;
        TimeTagArray { tags_ps: tags, duration_ps }
    }

    /// A pool preloaded with `qkd_bits` (deposited before session 1) and
    /// `psk_bits`, positioned at session 1.
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
}
