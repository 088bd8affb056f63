//! Key reservoirs and the key budget.
//!
//! Three key sources feed the protocol: QKD key bits deposited session by
//! session, a pre-shared key (PSK) reservoir, and a fixed post-quantum (PQC)
//! seed used as cipher key material. QKD and PSK bits are strictly single
//! use: every draw advances a monotone cursor and appends a ledger record,
//! so no bit position is ever handed out twice. QKD deposits only become
//! drawable in sessions after the one that created them.
//!
//! The budget arithmetic caps how many diff-time-tags may be one-time-pad
//! encrypted per session: with `B = r2 * T_run` bits banked,
//! `|Q| <= floor((B - k*2^k - l - k_aes - k_t1) / b)`.

use std::fmt;

use thiserror::Error;

use crate::bits::BitString;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolId {
    Qkd,
    Psk,
}

impl PoolId {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolId::Qkd => "qkd",
            PoolId::Psk => "psk",
        }
    }
}

impl fmt::Display for PoolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a key draw pays for. QKD keys serve five purposes: AES seeding, the
/// MAC pad `k2`, and one-time-pad encryption of ρ, `t1`, and the `Q` subset.
/// The PSK covers the fixed MAC hash key `k1` and the instruction-sequence
/// pad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    T1Otp,
    RhoOtp,
    DiffTagOtp,
    AesSeed,
    MacK2,
    MacK1,
    IsOtp,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::T1Otp => "t1-otp",
            Purpose::RhoOtp => "rho-otp",
            Purpose::DiffTagOtp => "diff-tag-otp",
            Purpose::AesSeed => "aes-seed",
            Purpose::MacK2 => "mac-k2",
            Purpose::MacK1 => "mac-k1",
            Purpose::IsOtp => "is-otp",
        }
    }

    pub fn preferred_pool(self) -> PoolId {
        match self {
            Purpose::MacK1 | Purpose::IsOtp => PoolId::Psk,
            _ => PoolId::Qkd,
        }
    }

    /// Timing data may only ever be one-time-padded with QKD keys; the PSK
    /// never substitutes for these purposes.
    pub fn is_timing_data(self) -> bool {
        matches!(self, Purpose::T1Otp | Purpose::DiffTagOtp)
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of the fallback policy for a draw that cannot be served from the
/// preferred pool. A downgrade is a value, not an error: it tells the
/// protocol to run in PQC-only mode with no information-theoretic layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackDecision {
    Use(PoolId),
    PurposeFails,
    Downgrade,
}

/// One single-use draw from a pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerRecord {
    pub purpose: Purpose,
    pub pool: PoolId,
    pub offset: u64,
    pub length: u64,
    pub session: u32,
}

impl LedgerRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.purpose, self.pool, self.offset, self.length, self.session
        )
    }
}

pub const LEDGER_CSV_HEADER: &str = "purpose,pool,offset,length,session";

#[derive(Debug, Error, PartialEq)]
pub enum KeystoreError {
    #[error("{pool} pool exhausted for {purpose}: need {needed} bits, {available} available (fallback: {fallback:?})")]
    Exhausted {
        pool: PoolId,
        purpose: Purpose,
        needed: u64,
        available: u64,
        fallback: FallbackDecision,
    },
    #[error("invalid keystore parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("deposit for session {session} arrived after a deposit for session {last}")]
    DepositOutOfOrder { session: u32, last: u32 },
    #[error("deposit must be nonempty")]
    EmptyDeposit,
}

/// Session budget parameters.
///
/// `r2_bits_per_s * t_run_s` is the bank of QKD bits available to one
/// session; the reference configuration is `k = 6`, `b = 10`, `l = 61`,
/// 256 AES seed bits, a 64-bit `t1` stamp, and 4-second sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetParams {
    /// Partition exponent; the diff array splits into `2^k` blocks.
    pub k: u32,
    /// Bits per serialized diff-time-tag.
    pub b: u32,
    /// MAC tag length in bits (the `k2` consumption).
    pub mac_len: u32,
    pub aes_seed_bits: u32,
    pub t1_bits: u32,
    pub t_run_s: f64,
    /// QKD key creation rate in bits per second.
    pub r2_bits_per_s: f64,
}

impl Default for BudgetParams {
    fn default() -> Self {
        Self {
            k: 6,
            b: 10,
            mac_len: 61,
            aes_seed_bits: 256,
            t1_bits: 64,
            t_run_s: 4.0,
            r2_bits_per_s: 664.0,
        }
    }
}

/// Result of the maximum-`|Q|` computation. An infeasible budget (negative
/// numerator) clamps to zero rather than failing; the cascade layer still
/// covers every tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QBudget {
    pub max_q: u64,
    pub feasible: bool,
}

impl BudgetParams {
    pub fn validate(&self) -> Result<(), KeystoreError> {
        let bad = |name: &'static str, reason: String| KeystoreError::InvalidParameter { name, reason };
        if self.k > 24 {
            return Err(bad("k", format!("must be <= 24, got {}", self.k)));
        }
        if self.b == 0 || self.b > 57 {
            return Err(bad("b", format!("must be in 1..=57, got {}", self.b)));
        }
        if self.mac_len == 0 || self.aes_seed_bits == 0 || self.t1_bits == 0 {
            return Err(bad("lengths", "mac_len, aes_seed_bits, t1_bits must be positive".into()));
        }
        if !(self.t_run_s > 0.0) || !self.t_run_s.is_finite() {
            return Err(bad("t_run_s", format!("must be > 0, got {}", self.t_run_s)));
        }
        if self.r2_bits_per_s < 0.0 || !self.r2_bits_per_s.is_finite() {
            return Err(bad("r2_bits_per_s", format!("must be >= 0, got {}", self.r2_bits_per_s)));
        }
        Ok(())
    }

    /// Per-session costs that do not scale with `|Q|`:
    /// `k*2^k + l + k_aes + k_t1`.
    pub fn fixed_cost_bits(&self) -> u64 {
        u64::from(self.k) * (1u64 << self.k)
            + u64::from(self.mac_len)
            + u64::from(self.aes_seed_bits)
            + u64::from(self.t1_bits)
    }

    /// Whole QKD bits banked for one session: `floor(r2 * T_run)`.
    pub fn session_budget_bits(&self) -> u64 {
        (self.r2_bits_per_s * self.t_run_s).floor().max(0.0) as u64
    }

    /// Maximum number of `b`-bit diff-time-tags the budget can one-time-pad:
    /// `max(0, floor((r2*T_run - k*2^k - l - k_aes - k_t1) / b))`.
    pub fn max_q(&self) -> QBudget {
        let budget = self.session_budget_bits() as i128;
        let numerator = budget - self.fixed_cost_bits() as i128;
        if numerator < 0 {
            QBudget { max_q: 0, feasible: false }
        } else {
            QBudget { max_q: (numerator / i128::from(self.b)) as u64, feasible: true }
        }
    }

    /// QKD usage rate `r1` for a session that encrypts `q` diff-time-tags:
    /// `(k*2^k + b*q + l + k_aes + k_t1) / T_run` bits per second.
    pub fn usage_rate(&self, q: u64) -> f64 {
        (self.fixed_cost_bits() + u64::from(self.b) * q) as f64 / self.t_run_s
    }
}

/// Single reservoir with a monotone read cursor.
#[derive(Debug, Clone, Default)]
struct Reservoir {
    bits: BitString,
    cursor: usize,
}

/// The three key reservoirs plus the draw ledger.
#[derive(Debug, Clone)]
pub struct KeyPool {
    qkd: Reservoir,
    /// Cumulative (session, end_offset) marks; bits with end offset at or
    /// below the mark of the last session strictly before the current one
    /// are drawable.
    qkd_deposits: Vec<(u32, usize)>,
    psk: Reservoir,
    pqc_seed: [u8; 16],
    ledger: Vec<LedgerRecord>,
    current_session: u32,
    mac_k1: Option<u64>,
}

impl KeyPool {
    pub fn new(psk_bits: BitString, pqc_seed: [u8; 16]) -> Self {
        Self {
            qkd: Reservoir::default(),
            qkd_deposits: Vec::new(),
            psk: Reservoir { bits: psk_bits, cursor: 0 },
            pqc_seed,
            ledger: Vec::new(),
            current_session: 0,
            mac_k1: None,
        }
    }

    pub fn pqc_seed(&self) -> [u8; 16] {
        self.pqc_seed
    }

    pub fn current_session(&self) -> u32 {
        self.current_session
    }

    /// Marks the start of a session; subsequent draws are ledgered under it
    /// and see only QKD deposits from strictly earlier sessions.
    pub fn begin_session(&mut self, session: u32) {
        self.current_session = session;
    }

    /// Appends QKD bits produced by `session`; drawable from `session + 1` on.
    pub fn deposit_qkd(&mut self, bits: &BitString, session: u32) -> Result<(), KeystoreError> {
        if bits.is_empty() {
            return Err(KeystoreError::EmptyDeposit);
        }
        if let Some(&(last, _)) = self.qkd_deposits.last() {
            if session < last {
                return Err(KeystoreError::DepositOutOfOrder { session, last });
            }
        }
        self.qkd.bits.extend(bits);
        self.qkd_deposits.push((session, self.qkd.bits.len()));
        Ok(())
    }

    /// QKD bits visible to the current session (deposits from strictly
    /// earlier sessions only).
    fn qkd_visible_limit(&self) -> usize {
        self.qkd_deposits
            .iter()
            .rev()
            .find(|(s, _)| *s < self.current_session)
            .map_or(0, |&(_, end)| end)
    }

    pub fn available(&self, pool: PoolId) -> u64 {
        match pool {
            PoolId::Qkd => (self.qkd_visible_limit().saturating_sub(self.qkd.cursor)) as u64,
            PoolId::Psk => (self.psk.bits.len() - self.psk.cursor) as u64,
        }
    }

    pub fn deposited(&self, pool: PoolId) -> u64 {
        match pool {
            PoolId::Qkd => self.qkd.bits.len() as u64,
            PoolId::Psk => self.psk.bits.len() as u64,
        }
    }

    pub fn drawn(&self, pool: PoolId) -> u64 {
        match pool {
            PoolId::Qkd => self.qkd.cursor as u64,
            PoolId::Psk => self.psk.cursor as u64,
        }
    }

    /// Bits deposited by exactly `session` (the gross yield of that session).
    pub fn deposited_in_session(&self, session: u32) -> u64 {
        let mut start = 0usize;
        let mut total = 0u64;
        for &(s, end) in &self.qkd_deposits {
            if s == session {
                total += (end - start) as u64;
            }
            start = end;
        }
        total
    }

    /// Bits drawn from `pool` while `session` was current.
    pub fn consumed_in_session(&self, pool: PoolId, session: u32) -> u64 {
        self.ledger
            .iter()
            .filter(|r| r.pool == pool && r.session == session)
            .map(|r| r.length)
            .sum()
    }

    pub fn ledger(&self) -> &[LedgerRecord] {
        &self.ledger
    }

    pub fn ledger_csv(&self) -> String {
        let mut out = String::from(LEDGER_CSV_HEADER);
        out.push('\n');
        for r in &self.ledger {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    /// The fallback policy: QKD purposes fall back to the PSK except for
    /// timing data, whose purposes fail instead; PSK purposes fall back to
    /// QKD; when both reservoirs are out of key material the protocol
    /// downgrades to PQC-only operation.
    pub fn resolve_fallback(&self, purpose: Purpose, n_bits: u64) -> FallbackDecision {
        let preferred = purpose.preferred_pool();
        if self.available(preferred) >= n_bits {
            return FallbackDecision::Use(preferred);
        }
        let qkd = self.available(PoolId::Qkd);
        let psk = self.available(PoolId::Psk);
        if purpose.is_timing_data() {
            if qkd == 0 && psk == 0 {
                FallbackDecision::Downgrade
            } else {
                FallbackDecision::PurposeFails
            }
        } else {
            let other = match preferred {
                PoolId::Qkd => PoolId::Psk,
                PoolId::Psk => PoolId::Qkd,
            };
            if self.available(other) >= n_bits {
                FallbackDecision::Use(other)
            } else {
                FallbackDecision::Downgrade
            }
        }
    }

    /// Draws the next `n_bits` from a specific pool; single use is enforced
    /// by the monotone cursor and every draw lands in the ledger.
    pub fn draw(&mut self, pool: PoolId, n_bits: u64, purpose: Purpose) -> Result<BitString, KeystoreError> {
        if n_bits == 0 {
            return Err(KeystoreError::InvalidParameter {
                name: "n_bits",
                reason: "draw length must be positive".into(),
            });
        }
        let available = self.available(pool);
        if n_bits > available {
            return Err(KeystoreError::Exhausted {
                pool,
                purpose,
                needed: n_bits,
                available,
                fallback: self.resolve_fallback(purpose, n_bits),
            });
        }
        let res = match pool {
            PoolId::Qkd => &mut self.qkd,
            PoolId::Psk => &mut self.psk,
        };
        let offset = res.cursor;
        let bits = res.bits.slice(offset, n_bits as usize);
        res.cursor += n_bits as usize;
        self.ledger.push(LedgerRecord {
            purpose,
            pool,
            offset: offset as u64,
            length: n_bits,
            session: self.current_session,
        });
        Ok(bits)
    }

    /// Draws for a purpose, applying the fallback policy when the preferred
    /// pool cannot serve the request.
    pub fn draw_for_purpose(
        &mut self,
        purpose: Purpose,
        n_bits: u64,
    ) -> Result<(BitString, PoolId), KeystoreError> {
        match self.resolve_fallback(purpose, n_bits) {
            FallbackDecision::Use(pool) => Ok((self.draw(pool, n_bits, purpose)?, pool)),
            decision => Err(KeystoreError::Exhausted {
                pool: purpose.preferred_pool(),
                purpose,
                needed: n_bits,
                available: self.available(purpose.preferred_pool()),
                fallback: decision,
            }),
        }
    }

    /// The fixed 61-bit MAC hash key `k1`, drawn once per deployment from
    /// the PSK (or QKD under fallback) and cached thereafter.
    pub fn mac_hash_key(&mut self) -> Result<u64, KeystoreError> {
        if let Some(k1) = self.mac_k1 {
            return Ok(k1);
        }
        let (bits, _) = self.draw_for_purpose(Purpose::MacK1, 61)?;
        let k1 = bits.read_uint(0, 61);
        self.mac_k1 = Some(k1);
        Ok(k1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn pool_with(qkd_bits: usize, psk_bits: usize) -> KeyPool {
        let mut rng = seeded(99);
        let mut pool = KeyPool::new(BitString::random(psk_bits, &mut rng), [7u8; 16]);
        if qkd_bits > 0 {
            pool.deposit_qkd(&BitString::random(qkd_bits, &mut rng), 0).unwrap();
        }
        pool.begin_session(1);
        pool
    }

    #[test]
    fn max_q_reference_value() {
        let p = BudgetParams::default(); // r2*T = 2656
        assert_eq!(p.max_q(), QBudget { max_q: 189, feasible: true });
    }

    #[test]
    fn max_q_empty_budget_is_infeasible() {
        let p = BudgetParams { r2_bits_per_s: 0.0, ..BudgetParams::default() };
        assert_eq!(p.max_q(), QBudget { max_q: 0, feasible: false });
    }

    #[test]
    fn max_q_exact_boundary_is_feasible() {
        // r2*T exactly covers the fixed costs: 384 + 61 + 256 + 64 = 765.
        let p = BudgetParams { r2_bits_per_s: 765.0 / 4.0, ..BudgetParams::default() };
        assert_eq!(p.max_q(), QBudget { max_q: 0, feasible: true });
    }

    #[test]
    fn usage_rate_reference_values() {
        let p = BudgetParams::default();
        assert_eq!(p.usage_rate(64), 351.25);

        let degenerate = BudgetParams { k: 0, ..BudgetParams::default() };
        assert_eq!(degenerate.usage_rate(0), (61 + 256 + 64) as f64 / 4.0); // 95.25

        let double = BudgetParams { t_run_s: 8.0, ..BudgetParams::default() };
        assert_eq!(double.usage_rate(64), 351.25 / 2.0);
    }

    #[test]
    fn draws_are_disjoint() {
        let mut pool = pool_with(4096, 0);
        let a = pool.draw(PoolId::Qkd, 61, Purpose::MacK2).unwrap();
        let b = pool.draw(PoolId::Qkd, 61, Purpose::MacK2).unwrap();
        assert_ne!(a, b, "two draws returned identical bits (astronomically unlikely)");
        let l = pool.ledger();
        assert_eq!(l[0].offset + l[0].length, l[1].offset);
    }

    #[test]
    fn exhausted_qkd_names_psk_fallback() {
        let mut pool = pool_with(0, 1024);
        let err = pool.draw(PoolId::Qkd, 61, Purpose::MacK2).unwrap_err();
        match err {
            KeystoreError::Exhausted { fallback, .. } => {
                assert_eq!(fallback, FallbackDecision::Use(PoolId::Psk));
            }
            other => panic!("unexpected error {other:?}"),
        }
        // And the purpose-level draw heals through the PSK.
        let (_, pool_used) = pool.draw_for_purpose(Purpose::MacK2, 61).unwrap();
        assert_eq!(pool_used, PoolId::Psk);
    }

    #[test]
    fn timing_data_never_falls_back_to_psk() {
        let pool = pool_with(0, 1024);
        assert_eq!(pool.resolve_fallback(Purpose::DiffTagOtp, 640), FallbackDecision::PurposeFails);
        assert_eq!(pool.resolve_fallback(Purpose::T1Otp, 64), FallbackDecision::PurposeFails);
    }

    #[test]
    fn psk_purposes_fall_back_to_qkd() {
        let pool = pool_with(1024, 0);
        assert_eq!(pool.resolve_fallback(Purpose::IsOtp, 8), FallbackDecision::Use(PoolId::Qkd));
    }

    #[test]
    fn both_pools_empty_downgrades() {
        let pool = pool_with(0, 0);
        assert_eq!(pool.resolve_fallback(Purpose::MacK2, 61), FallbackDecision::Downgrade);
        assert_eq!(pool.resolve_fallback(Purpose::DiffTagOtp, 10), FallbackDecision::Downgrade);
        assert_eq!(pool.resolve_fallback(Purpose::IsOtp, 8), FallbackDecision::Downgrade);
    }

    #[test]
    fn deposits_visible_only_in_later_sessions() {
        let mut rng = seeded(3);
        let mut pool = KeyPool::new(BitString::new(), [0u8; 16]);
        pool.begin_session(3);
        pool.deposit_qkd(&BitString::random(128, &mut rng), 3).unwrap();
        assert_eq!(pool.available(PoolId::Qkd), 0);
        assert!(pool.draw(PoolId::Qkd, 64, Purpose::T1Otp).is_err());
        pool.begin_session(4);
        assert_eq!(pool.available(PoolId::Qkd), 128);
        assert!(pool.draw(PoolId::Qkd, 64, Purpose::T1Otp).is_ok());
    }

    #[test]
    fn accounting_identity_holds() {
        let mut pool = pool_with(512, 256);
        pool.draw(PoolId::Qkd, 100, Purpose::RhoOtp).unwrap();
        pool.draw(PoolId::Qkd, 64, Purpose::T1Otp).unwrap();
        pool.draw(PoolId::Psk, 8, Purpose::IsOtp).unwrap();
        assert_eq!(pool.drawn(PoolId::Qkd) + pool.available(PoolId::Qkd), 512);
        assert_eq!(pool.drawn(PoolId::Psk) + pool.available(PoolId::Psk), 256);
        let csv = pool.ledger_csv();
        assert!(csv.starts_with("purpose,pool,offset,length,session\n"));
        assert!(csv.contains("rho-otp,qkd,0,100,1"));
    }

    #[test]
    fn out_of_order_deposits_rejected() {
        let mut rng = seeded(4);
        let mut pool = KeyPool::new(BitString::new(), [0u8; 16]);
        pool.deposit_qkd(&BitString::random(8, &mut rng), 5).unwrap();
        let err = pool.deposit_qkd(&BitString::random(8, &mut rng), 4).unwrap_err();
        assert_eq!(err, KeystoreError::DepositOutOfOrder { session: 4, last: 5 });
        assert_eq!(pool.deposit_qkd(&BitString::new(), 6), Err(KeystoreError::EmptyDeposit));
    }

    #[test]
    fn mac_hash_key_is_cached() {
        let mut pool = pool_with(0, 256);
        let k1 = pool.mac_hash_key().unwrap();
        assert_eq!(pool.mac_hash_key().unwrap(), k1);
        assert_eq!(pool.ledger().len(), 1, "k1 must be drawn exactly once");
        assert!(k1 < 1 << 61);
    }
}
