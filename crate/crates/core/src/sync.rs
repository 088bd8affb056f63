//! Clock synchronization by coincidence cross-correlation.
//!
//! For two stations' tag arrays the correlation `C_AB(t')` counts pairs
//! coincident within a window once Bob's array is delayed by `t'`; the
//! delay that maximizes it locates the relative clock offset. A coarse
//! step-size scan tolerates large offsets, a fine scan at sub-nanosecond
//! bins refines the peak, and per-block offsets over a run fit a linear
//! drift. Sign convention: a pair lands in the bin whose center `t'`
//! satisfies `|t_B + t' - t_A| <= bin/2`, so a clock running *ahead* at Bob
//! peaks at negative delay and the reported offset is `-t'_peak`.

use thiserror::Error;

use crate::timebase::TimeTagArray;
use crate::PS_PER_SEC;

#[derive(Debug, Error, PartialEq)]
pub enum SyncError {
    #[error("no significant correlation peak (peak {peak} vs floor {floor:.2})")]
    NoLock { peak: u64, floor: f64 },
    #[error("correlation peak unreliable (peak {peak} vs floor {floor:.2})")]
    UnreliablePeak { peak: u64, floor: f64 },
    #[error("drift fit needs at least {needed} usable blocks, found {found}")]
    InsufficientBlocks { found: usize, needed: usize },
    #[error("invalid sync parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

/// Alignment scan settings; defaults follow the reference run (±1 ms coarse
/// scan at 100 ns steps, ±50 ns fine window at 0.5 ns bins).
#[derive(Debug, Clone)]
pub struct SyncConfig {
    pub max_offset_ps: i64,
    pub coarse_bin_ps: i64,
    pub fine_window_ps: i64,
    pub fine_bin_ps: i64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            max_offset_ps: 1_000_000_000,
            coarse_bin_ps: 100_000,
            fine_window_ps: 50_000,
            fine_bin_ps: 500,
        }
    }
}

/// Coincidence counts per relative-delay bin.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    pub bin_width_ps: i64,
    /// Center of `counts[0]`; bin `i` is centered at
    /// `first_center_ps + i * bin_width_ps`.
    pub first_center_ps: i64,
    pub counts: Vec<u64>,
    pub accumulation_time_s: f64,
}

impl CorrelationHistogram {
    pub fn center(&self, index: usize) -> i64 {
        self.first_center_ps + index as i64 * self.bin_width_ps
    }

    /// Index and count of the maximal bin (first of equals).
    pub fn peak(&self) -> Option<(usize, u64)> {
        self.counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, &c)| (i, c))
    }

    /// Mean count over bins excluding `exclude` around the peak.
    pub fn background(&self, exclude: usize) -> f64 {
        let Some((peak, _)) = self.peak() else { return 0.0 };
        let lo = peak.saturating_sub(exclude);
        let hi = (peak + exclude).min(self.counts.len() - 1);
        let mut sum = 0u64;
        let mut n = 0usize;
        for (i, &c) in self.counts.iter().enumerate() {
            if i < lo || i > hi {
                sum += c;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum as f64 / n as f64
        }
    }

    /// CSV rows `delay_ps,counts,phase`.
    pub fn csv_rows(&self, phase: &str) -> String {
        let mut out = String::new();
        for (i, &c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.center(i), c, phase));
        }
        out
    }
}

pub const HISTOGRAM_CSV_HEADER: &str = "delay_ps,counts,phase";

/// Background estimates exclude the peak ± this many bins.
const BACKGROUND_EXCLUSION: usize = 5;

/// Synchronization result.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncEstimate {
    /// Relative clock offset `δt_BA` in picoseconds (Bob minus Alice).
    pub offset_ps: f64,
    /// Linear drift in picoseconds per second.
    pub drift_ps_per_s: f64,
    pub peak_count: u64,
    /// Expected accidental coincidences per bin.
    pub accidental_floor: f64,
    pub snr: f64,
    /// Fitted Gaussian width of the peak, when computed.
    pub sigma_ps: Option<f64>,
    /// False when `peak < floor + 5 * sqrt(floor)`.
    pub reliable: bool,
}

fn check_bin(bin_width_ps: i64) -> Result<(), SyncError> {
    if bin_width_ps <= 0 {
        return Err(SyncError::InvalidParameter {
            name: "bin_width_ps",
            reason: format!("must be > 0, got {bin_width_ps}"),
        });
    }
    Ok(())
}

/// Counts coincidences for every delay bin over `±scan_range_ps`.
///
/// A pair `(t_A, t_B)` lands in every bin center `c` with
/// `|t_B + c - t_A| <= bin/2` (both bins on an exact half-window tie).
/// Two cursors sweep the sorted arrays so the cost is linear in the tags
/// plus the pairs inside the scan horizon; the result equals all-pairs
/// brute-force counting exactly.
pub fn cross_correlate(
    a: &TimeTagArray,
    b: &TimeTagArray,
    scan_range_ps: i64,
    bin_width_ps: i64,
) -> Result<CorrelationHistogram, SyncError> {
    check_bin(bin_width_ps)?;
    if scan_range_ps < 0 {
        return Err(SyncError::InvalidParameter {
            name: "scan_range_ps",
            reason: format!("must be >= 0, got {scan_range_ps}"),
        });
    }
    let w = bin_width_ps;
    let m_max = scan_range_ps / w;
    let n_bins = (2 * m_max + 1) as usize;
    let mut counts = vec![0u64; n_bins];
    // Pairs matter when 2|d| <= 2*m_max*w + w, d = t_A - t_B.
    let horizon2 = 2 * m_max * w + w;

    let mut j_lo = 0usize;
    for &ta in &a.tags_ps {
        // Drop b-tags too far in the past: 2(ta - tb) > horizon2.
        while j_lo < b.tags_ps.len() && 2 * (ta - b.tags_ps[j_lo]) > horizon2 {
            j_lo += 1;
        }
        for &tb in &b.tags_ps[j_lo..] {
            let d = ta - tb;
            if 2 * d < -horizon2 {
                break;
            }
            // Centers m*w with |d - m*w| <= w/2: m in
            // [ceil((2d-w)/2w), floor((2d+w)/2w)].
            let lo = div_ceil_i64(2 * d - w, 2 * w).max(-m_max);
            let hi = div_floor_i64(2 * d + w, 2 * w).min(m_max);
            for m in lo..=hi {
                counts[(m + m_max) as usize] += 1;
            }
        }
    }

    Ok(CorrelationHistogram {
        bin_width_ps: w,
        first_center_ps: -m_max * w,
        counts,
        accumulation_time_s: a.duration_secs().max(b.duration_secs()),
    })
}

fn div_floor_i64(p: i64, q: i64) -> i64 {
    p.div_euclid(q)
}

fn div_ceil_i64(p: i64, q: i64) -> i64 {
    -(-p).div_euclid(q)
}

fn shift_tags(tags: &TimeTagArray, delta_ps: i64) -> TimeTagArray {
    TimeTagArray {
        tags_ps: tags.tags_ps.iter().map(|t| t + delta_ps).collect(),
        duration_ps: tags.duration_ps,
    }
}

/// Step-size scan over `±max_offset_ps`; returns the delay-bin center with
/// the maximal coincidence count, or no-lock when no bin stands out of the
/// accidental background.
pub fn coarse_align(
    a: &TimeTagArray,
    b: &TimeTagArray,
    max_offset_ps: i64,
    coarse_bin_ps: i64,
) -> Result<i64, SyncError> {
    let h = cross_correlate(a, b, max_offset_ps, coarse_bin_ps)?;
    let (peak_idx, peak) = h.peak().unwrap_or((0, 0));
    let floor = h.background(BACKGROUND_EXCLUSION);
    if peak < 5 || (peak as f64) < floor + 5.0 * floor.sqrt() {
        return Err(SyncError::NoLock { peak, floor });
    }
    Ok(h.center(peak_idx))
}

/// Fine alignment around a coarse candidate.
pub struct FineAlignment {
    pub estimate: SyncEstimate,
    /// Fine histogram with absolute delay centers (candidate included).
    pub histogram: CorrelationHistogram,
}

/// Fine scan of `±window_ps` around `candidate_ps` at `bin_width_ps` bins.
///
/// The offset is the 3-bin centroid around the argmax, negated into the
/// `δt_BA` convention; the accidental floor comes from out-of-peak bins.
/// An insignificant peak is returned flagged unreliable, not an error.
pub fn fine_align(
    a: &TimeTagArray,
    b: &TimeTagArray,
    candidate_ps: i64,
    window_ps: i64,
    bin_width_ps: i64,
) -> Result<FineAlignment, SyncError> {
    let shifted = shift_tags(b, candidate_ps);
    let mut h = cross_correlate(a, &shifted, window_ps, bin_width_ps)?;
    h.first_center_ps += candidate_ps;
    let (peak_idx, peak) = h.peak().unwrap_or((0, 0));
    let floor = h.background(BACKGROUND_EXCLUSION);
    let reliable = peak > 0 && (peak as f64) >= floor + 5.0 * floor.sqrt();

    // Sub-bin localization: centroid of the peak bin and its neighbors.
    let lo = peak_idx.saturating_sub(1);
    let hi = (peak_idx + 1).min(h.counts.len().saturating_sub(1));
    let mut weight = 0.0f64;
    let mut moment = 0.0f64;
    for i in lo..=hi {
        let c = h.counts[i] as f64;
        weight += c;
        moment += c * h.center(i) as f64;
    }
    let t_peak = if weight > 0.0 { moment / weight } else { h.center(peak_idx) as f64 };

    let snr = if floor > 0.0 { peak as f64 / floor } else { f64::INFINITY };
    Ok(FineAlignment {
        estimate: SyncEstimate {
            offset_ps: -t_peak,
            drift_ps_per_s: 0.0,
            peak_count: peak,
            accidental_floor: floor,
            snr,
            sigma_ps: None,
            reliable,
        },
        histogram: h,
    })
}

/// Per-block offset used by the drift fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOffset {
    pub t_center_s: f64,
    pub offset_ps: f64,
    pub weight: f64,
}

/// Drift fit: per-block offsets and the weighted least-squares line.
#[derive(Debug, Clone)]
pub struct DriftFit {
    pub estimate: SyncEstimate,
    pub blocks: Vec<BlockOffset>,
    /// Some blocks failed to align and were dropped from the fit.
    pub degraded: bool,
}

/// Splits the run into blocks of `block_len_s`, aligns each, and fits
/// `offset(t) = δ0 + d·t` by weighted least squares. Blocks that fail to
/// lock degrade the fit; fewer than four usable blocks is an error.
pub fn estimate_drift(
    a: &TimeTagArray,
    b: &TimeTagArray,
    block_len_s: f64,
    cfg: &SyncConfig,
) -> Result<DriftFit, SyncError> {
    if !(block_len_s > 0.0) || !block_len_s.is_finite() {
        return Err(SyncError::InvalidParameter {
            name: "block_len_s",
            reason: format!("must be > 0, got {block_len_s}"),
        });
    }
    let duration_ps = a.duration_ps.min(b.duration_ps);
    let block_ps = (block_len_s * PS_PER_SEC as f64).round() as i64;
    let n_blocks = (duration_ps / block_ps) as usize;
    if n_blocks < 4 {
        return Err(SyncError::InsufficientBlocks { found: n_blocks, needed: 4 });
    }

    let mut blocks = Vec::with_capacity(n_blocks);
    for idx in 0..n_blocks {
        let start = idx as i64 * block_ps;
        let end = start + block_ps;
        let wa = a.window(start, end);
        let wb = b.window(start, end);
        let Ok(candidate) = coarse_align(&wa, &wb, cfg.max_offset_ps, cfg.coarse_bin_ps) else {
            continue;
        };
        let Ok(fine) = fine_align(&wa, &wb, candidate, cfg.fine_window_ps, cfg.fine_bin_ps) else {
            continue;
        };
        if !fine.estimate.reliable {
            continue;
        }
        blocks.push(BlockOffset {
            t_center_s: (start + end) as f64 / 2.0 / PS_PER_SEC as f64,
            offset_ps: fine.estimate.offset_ps,
            weight: fine.estimate.peak_count as f64,
        });
    }
    let degraded = blocks.len() < n_blocks;
    if blocks.len() < 4 {
        return Err(SyncError::InsufficientBlocks { found: blocks.len(), needed: 4 });
    }

    // Weighted least squares for offset(t) = δ0 + d·t.
    let wsum: f64 = blocks.iter().map(|p| p.weight).sum();
    let t_bar: f64 = blocks.iter().map(|p| p.weight * p.t_center_s).sum::<f64>() / wsum;
    let y_bar: f64 = blocks.iter().map(|p| p.weight * p.offset_ps).sum::<f64>() / wsum;
    let sxx: f64 = blocks.iter().map(|p| p.weight * (p.t_center_s - t_bar).powi(2)).sum();
    let sxy: f64 = blocks
        .iter()
        .map(|p| p.weight * (p.t_center_s - t_bar) * (p.offset_ps - y_bar))
        .sum();
    let drift = sxy / sxx;
    let intercept = y_bar - drift * t_bar;

    let peak_count: u64 = blocks.iter().map(|p| p.weight as u64).sum();
    Ok(DriftFit {
        estimate: SyncEstimate {
            offset_ps: intercept,
            drift_ps_per_s: drift,
            peak_count,
            accidental_floor: 0.0,
            snr: f64::INFINITY,
            sigma_ps: None,
            reliable: true,
        },
        blocks,
        degraded,
    })
}

/// Removes an estimated offset and drift from an array:
/// `t' = t - offset - drift * t`.
pub fn apply_correction(tags: &TimeTagArray, offset_ps: f64, drift_ps_per_s: f64) -> TimeTagArray {
    let mut corrected: Vec<i64> = tags
        .tags_ps
        .iter()
        .map(|&t| {
            (t as f64 - offset_ps - drift_ps_per_s * (t as f64 / PS_PER_SEC as f64)).round() as i64
        })
        .collect();
    corrected.sort_unstable();
    corrected.dedup();
    TimeTagArray { tags_ps: corrected, duration_ps: tags.duration_ps }
}

/// Background-subtracted method-of-moments width of the correlation peak,
/// evaluated over ±3σ around it (window found iteratively).
pub fn fit_peak_sigma(h: &CorrelationHistogram) -> Result<f64, SyncError> {
    let (peak_idx, peak) = h.peak().unwrap_or((0, 0));
    let floor = h.background(BACKGROUND_EXCLUSION);
    if peak == 0 || (peak as f64) < floor + 5.0 * floor.sqrt() {
        return Err(SyncError::UnreliablePeak { peak, floor });
    }
    let w = h.bin_width_ps as f64;
    let mut sigma = w;
    let mut half_prev = 0usize;
    for _ in 0..16 {
        let half = ((3.0 * sigma / w).ceil() as usize).max(1);
        let lo = peak_idx.saturating_sub(half);
        let hi = (peak_idx + half).min(h.counts.len() - 1);
        let mut weight = 0.0f64;
        let mut mean = 0.0f64;
        for i in lo..=hi {
            let c = (h.counts[i] as f64 - floor).max(0.0);
            weight += c;
            mean += c * h.center(i) as f64;
        }
        if weight <= 0.0 {
            return Err(SyncError::UnreliablePeak { peak, floor });
        }
        mean /= weight;
        let mut var = 0.0f64;
        for i in lo..=hi {
            let c = (h.counts[i] as f64 - floor).max(0.0);
            var += c * (h.center(i) as f64 - mean).powi(2);
        }
        sigma = (var / weight).sqrt();
        if half == half_prev {
            break;
        }
        half_prev = half;
    }
    Ok(sigma)
}
