//! Lightweight QKD session stand-in: basis sifting, QBER estimation on a
//! disclosed sample, and an asymptotic key-yield model feeding the
//! keystore. Real post-processing (error correction, privacy
//! amplification) is replaced by a calibrated `yield_factor`; this is a
//! model of a key source, not a post-processing pipeline.

use rand::seq::index::sample as index_sample;
use thiserror::Error;

use crate::bits::BitString;
use crate::rng::seeded;
use crate::timebase::PairOutcome;

#[derive(Debug, Error, PartialEq)]
pub enum QkdError {
    #[error("QBER sample is empty (fraction {fraction} of {sifted} sifted bits)")]
    EmptySample { fraction: f64, sifted: usize },
    #[error("invalid QKD parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

/// Matched-basis bit streams after sifting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiftedBits {
    pub alice: Vec<bool>,
    pub bob: Vec<bool>,
}

impl SiftedBits {
    pub fn len(&self) -> usize {
        self.alice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice.is_empty()
    }

    /// Alice's bits packed for deposit into the keystore.
    pub fn alice_key_bits(&self, n: usize) -> BitString {
        let mut bits = BitString::with_capacity(n);
        for &b in self.alice.iter().take(n) {
            bits.push_bit(b);
        }
        bits
    }
}

/// Keeps only matched-basis pairs (about half for uniform bases).
pub fn sift(outcomes: &[PairOutcome]) -> SiftedBits {
    let mut sifted = SiftedBits::default();
    for o in outcomes {
        if o.bases_match() {
            sifted.alice.push(o.alice_bit);
            sifted.bob.push(o.bob_bit);
        }
    }
    sifted
}

/// QBER estimate from a disclosed random sample.
#[derive(Debug, Clone, PartialEq)]
pub struct QberEstimate {
    pub qber: f64,
    pub disclosed: usize,
    /// Undisclosed pairs, still usable as key material.
    pub kept: SiftedBits,
}

/// Discloses `sample_fraction` of the sifted pairs, measures their
/// disagreement rate, and discards them from the key material.
pub fn estimate_qber(
    sifted: &SiftedBits,
    sample_fraction: f64,
    seed: u64,
) -> Result<QberEstimate, QkdError> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(QkdError::InvalidParameter {
            name: "sample_fraction",
            reason: format!("must be in (0, 1], got {sample_fraction}"),
        });
    }
    let n = sifted.len();
    let sample_size = ((n as f64 * sample_fraction).round() as usize).min(n);
    if sample_size == 0 {
        return Err(QkdError::EmptySample { fraction: sample_fraction, sifted: n });
    }
    let mut rng = seeded(seed);
    let mut disclosed = vec![false; n];
    for i in index_sample(&mut rng, n, sample_size) {
        disclosed[i] = true;
    }
    let mut errors = 0usize;
    let mut kept = SiftedBits::default();
    for i in 0..n {
        if disclosed[i] {
            errors += usize::from(sifted.alice[i] != sifted.bob[i]);
        } else {
            kept.alice.push(sifted.alice[i]);
            kept.bob.push(sifted.bob[i]);
        }
    }
    Ok(QberEstimate { qber: errors as f64 / sample_size as f64, disclosed: sample_size, kept })
}

/// Binary entropy `h2(q)` in bits.
pub fn binary_entropy(q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    -q * q.log2() - (1.0 - q) * (1.0 - q).log2()
}

/// Asymptotic key yield: `floor(yield_factor * sifted * max(0, 1 - 2*h2(q)))`.
///
/// The entropy bound crosses zero near `q = 11%`; beyond it no key remains.
pub fn model_key_yield(sifted_count: usize, qber: f64, yield_factor: f64) -> Result<u64, QkdError> {
    if !(yield_factor > 0.0 && yield_factor <= 1.0) {
        return Err(QkdError::InvalidParameter {
            name: "yield_factor",
            reason: format!("must be in (0, 1], got {yield_factor}"),
        });
    }
    if !(0.0..=1.0).contains(&qber) {
        return Err(QkdError::InvalidParameter {
            name: "qber",
            reason: format!("must be in [0, 1], got {qber}"),
        });
    }
    let secret_fraction = (1.0 - 2.0 * binary_entropy(qber)).max(0.0);
    Ok((yield_factor * sifted_count as f64 * secret_fraction).floor() as u64)
}

/// Per-session accounting row; `net_rate = (gross - consumed) / T_run`.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub session_id: u32,
    pub sifted_bits: u64,
    pub qber: f64,
    pub gross_key_bits: u64,
    pub consumed_bits: u64,
    pub net_rate_bits_per_s: f64,
}

pub const SESSIONS_CSV_HEADER: &str = "session,sifted_bits,qber,gross_bits,consumed_bits,net_rate_bits_per_s";

impl SessionReport {
    pub fn new(
        session_id: u32,
        sifted_bits: u64,
        qber: f64,
        gross_key_bits: u64,
        consumed_bits: u64,
        t_run_s: f64,
    ) -> Self {
        Self {
            session_id,
            sifted_bits,
            qber,
            gross_key_bits,
            consumed_bits,
            net_rate_bits_per_s: (gross_key_bits as f64 - consumed_bits as f64) / t_run_s,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{},{},{:.4}",
            self.session_id,
            self.sifted_bits,
            self.qber,
            self.gross_key_bits,
            self.consumed_bits,
            self.net_rate_bits_per_s
        )
    }
}
