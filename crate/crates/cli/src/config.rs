//! Scenario configuration: TOML sections per subsystem, pre-flight
//! validation, and attack selection.

use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use qstt_core::keystore::BudgetParams;
use qstt_core::sync::SyncConfig;
use qstt_core::timebase::ChannelModel;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub sessions: u32,
    pub seed: u64,
    pub t_run_s: f64,
    /// Cap on tags encrypted per session; 0 means all detected tags.
    pub tags_per_session: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { sessions: 10, seed: 7, t_run_s: 4.0, tags_per_session: 0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub pair_rate_hz: f64,
    /// Signal-idler birth-time spread σ_int.
    pub source_jitter_ps: f64,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self { pair_rate_hz: 10_000.0, source_jitter_ps: 0.3 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationSection {
    pub path_length_m: f64,
    pub loss_db: f64,
    pub dark_count_rate_hz: f64,
    pub detector_jitter_ps: f64,
    pub tagger_jitter_ps: f64,
    pub tagger_resolution_ps: i64,
    pub offset_ps: i64,
    pub drift_ps_per_s: f64,
}

impl Default for StationSection {
    fn default() -> Self {
        Self {
            path_length_m: 1.5,
            loss_db: 10.3,
            dark_count_rate_hz: 100.0,
            detector_jitter_ps: 330.0,
            tagger_jitter_ps: 330.0,
            tagger_resolution_ps: 500,
            offset_ps: 0,
            drift_ps_per_s: 0.0,
        }
    }
}

impl StationSection {
    pub fn channel(&self) -> ChannelModel {
        ChannelModel {
            path_length_m: self.path_length_m,
            transmittance: ChannelModel::transmittance_from_loss_db(self.loss_db),
            dark_count_rate_hz: self.dark_count_rate_hz,
            detector_jitter_ps: self.detector_jitter_ps,
            tagger_jitter_ps: self.tagger_jitter_ps,
            tagger_resolution_ps: self.tagger_resolution_ps,
        }
    }
}

fn default_bob() -> StationSection {
    StationSection { offset_ps: 10_000, drift_ps_per_s: 250.0, ..StationSection::default() }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeysSection {
    /// QKD bits banked before the first session.
    pub initial_qkd_bits: usize,
    pub psk_bits: usize,
    /// 32 hex chars; empty derives the seed from the run seed.
    pub pqc_seed_hex: String,
    /// Optional hex files overriding the generated pools.
    pub qkd_pool_hex_file: String,
    pub psk_pool_hex_file: String,
}

impl Default for KeysSection {
    fn default() -> Self {
        Self {
            initial_qkd_bits: 4096,
            psk_bits: 4096,
            pqc_seed_hex: String::new(),
            qkd_pool_hex_file: String::new(),
            psk_pool_hex_file: String::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSection {
    pub k: u32,
    pub b: u32,
    pub mac_len: u32,
    pub aes_seed_bits: u32,
    pub t1_bits: u32,
    pub q_target: u64,
}

impl Default for BudgetSection {
    fn default() -> Self {
        Self { k: 6, b: 26, mac_len: 61, aes_seed_bits: 256, t1_bits: 64, q_target: 64 }
    }
}

impl BudgetSection {
    pub fn budget(&self, t_run_s: f64, r2_bits_per_s: f64) -> BudgetParams {
        BudgetParams {
            k: self.k,
            b: self.b,
            mac_len: self.mac_len,
            aes_seed_bits: self.aes_seed_bits,
            t1_bits: self.t1_bits,
            t_run_s,
            r2_bits_per_s,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub codec_tick_ps: i64,
}

impl Default for CodecSection {
    fn default() -> Self {
        Self { codec_tick_ps: 500 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSection {
    pub max_offset_ps: i64,
    pub coarse_bin_ps: i64,
    pub fine_window_ps: i64,
    pub fine_bin_ps: i64,
    pub drift_block_s: f64,
}

impl Default for SyncSection {
    fn default() -> Self {
        Self {
            max_offset_ps: 1_000_000_000,
            coarse_bin_ps: 100_000,
            fine_window_ps: 50_000,
            fine_bin_ps: 500,
            drift_block_s: 5.0,
        }
    }
}

impl SyncSection {
    pub fn sync_config(&self) -> SyncConfig {
        SyncConfig {
            max_offset_ps: self.max_offset_ps,
            coarse_bin_ps: self.coarse_bin_ps,
            fine_window_ps: self.fine_window_ps,
            fine_bin_ps: self.fine_bin_ps,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QkdSection {
    pub pairs_per_session: usize,
    pub visibility: f64,
    pub sample_fraction: f64,
    pub yield_factor: f64,
}

impl Default for QkdSection {
    fn default() -> Self {
        Self {
            pairs_per_session: 1_000_000,
            visibility: 0.873,
            sample_fraction: 0.1,
            yield_factor: 0.0186,
        }
    }
}

/// Injected attack on one layer of the exchange.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Attack {
    #[default]
    None,
    /// Flip one bit of the classical message (random position unless given).
    Tamper(Option<usize>),
    /// Substitute the previous session's message.
    Replay,
    /// Delay the photon channel (Bob's detections) by this many ps; the
    /// classical message is untouched.
    Delay(i64),
    /// Zero the MAC field.
    DropMac,
}

impl Attack {
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => (k, Some(p)),
            None => (s, None),
        };
        match (kind, param) {
            ("none", None) => Ok(Attack::None),
            ("tamper", None) => Ok(Attack::Tamper(None)),
            ("tamper", Some(p)) => Ok(Attack::Tamper(Some(
                p.parse().with_context(|| format!("bad tamper bit index {p:?}"))?,
            ))),
            ("replay", None) => Ok(Attack::Replay),
            ("delay", Some(p)) => Ok(Attack::Delay(
                p.parse().with_context(|| format!("bad delay picoseconds {p:?}"))?,
            )),
            ("drop-mac", None) => Ok(Attack::DropMac),
            _ => anyhow::bail!(
                "unknown attack {s:?}; expected none, tamper[:BIT], replay, delay:PS, drop-mac"
            ),
        }
    }

    /// Attacks on the classical channel that authentication must catch.
    pub fn expects_detection(&self) -> bool {
        matches!(self, Attack::Tamper(_) | Attack::Replay | Attack::DropMac)
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Attack::None => write!(f, "none"),
            Attack::Tamper(None) => write!(f, "tamper"),
            Attack::Tamper(Some(bit)) => write!(f, "tamper:{bit}"),
            Attack::Replay => write!(f, "replay"),
            Attack::Delay(ps) => write!(f, "delay:{ps}"),
            Attack::DropMac => write!(f, "drop-mac"),
        }
    }
}

/// Whole-scenario configuration; every field has a reference default so an
/// empty file (or none) is runnable.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub run: RunSection,
    pub source: SourceSection,
    pub alice: StationSection,
    pub bob: StationSection,
    pub keys: KeysSection,
    pub budget: BudgetSection,
    pub codec: CodecSection,
    pub sync: SyncSection,
    pub qkd: QkdSection,
    #[serde(skip)]
    pub attack: Attack,
    #[serde(skip)]
    pub strict_paper_mac: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            source: SourceSection::default(),
            alice: StationSection::default(),
            bob: default_bob(),
            keys: KeysSection::default(),
            budget: BudgetSection::default(),
            codec: CodecSection::default(),
            sync: SyncSection::default(),
            qkd: QkdSection::default(),
            attack: Attack::None,
            strict_paper_mac: false,
        }
    }
}

impl ScenarioConfig {
    /// The reference scenario: paper-style source, loss, dark counts, and a
    /// +10 ns / +0.25 ns/s clock error at Bob.
    pub fn reference() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: ScenarioConfig =
            toml::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?;
        Ok(cfg)
    }

    pub fn total_duration_s(&self) -> f64 {
        self.run.sessions as f64 * self.run.t_run_s
    }
}

/// Expected detection rate per station, events per second.
fn detection_rate_hz(cfg: &ScenarioConfig, station: &StationSection) -> f64 {
    cfg.source.pair_rate_hz * ChannelModel::transmittance_from_loss_db(station.loss_db)
        + station.dark_count_rate_hz
}

/// Minimal diff width that survives the gap distribution: with `n` gaps at
/// detection rate `r`, the 1-in-1000-runs worst gap is about
/// `ln(n/0.001)/r`; the width must cover it in codec ticks.
pub fn minimal_safe_b(detection_rate_hz: f64, n_gaps: f64, codec_tick_ps: i64) -> u32 {
    if detection_rate_hz <= 0.0 || n_gaps < 1.0 {
        return 1;
    }
    let worst_gap_s = (n_gaps / 1e-3).ln() / detection_rate_hz;
    let ticks = (worst_gap_s * 1e12 / codec_tick_ps as f64).ceil().max(1.0) as u64;
    64 - ticks.leading_zeros()
}

/// Pre-flight validation; returns human-readable issues, empty when clean.
/// Never mutates state.
pub fn validate_config(cfg: &ScenarioConfig) -> Vec<String> {
    let mut issues = Vec::new();
    let mut check = |ok: bool, msg: String| {
        if !ok {
            issues.push(msg);
        }
    };

    check(cfg.run.sessions >= 1, "run.sessions: must be at least 1".into());
    check(
        cfg.run.t_run_s > 0.0 && cfg.run.t_run_s.is_finite(),
        format!("run.t_run_s: must be > 0, got {}", cfg.run.t_run_s),
    );
    check(
        (cfg.run.t_run_s * 1e6).fract().abs() < 1e-9,
        format!("run.t_run_s: must be a whole number of microseconds, got {}", cfg.run.t_run_s),
    );
    check(
        cfg.source.pair_rate_hz > 0.0,
        format!("source.pair_rate_hz: must be > 0, got {}", cfg.source.pair_rate_hz),
    );
    check(
        cfg.source.source_jitter_ps >= 0.0,
        format!("source.source_jitter_ps: must be >= 0, got {}", cfg.source.source_jitter_ps),
    );

    for (name, st) in [("alice", &cfg.alice), ("bob", &cfg.bob)] {
        check(st.loss_db >= 0.0, format!("{name}.loss_db: must be >= 0, got {}", st.loss_db));
        check(
            st.tagger_resolution_ps > 0,
            format!("{name}.tagger_resolution_ps: must be > 0, got {}", st.tagger_resolution_ps),
        );
        check(
            st.detector_jitter_ps >= 0.0 && st.tagger_jitter_ps >= 0.0,
            format!("{name}: jitter sigmas must be >= 0"),
        );
        check(
            st.dark_count_rate_hz >= 0.0,
            format!("{name}.dark_count_rate_hz: must be >= 0, got {}", st.dark_count_rate_hz),
        );
        check(
            st.tagger_resolution_ps > 0
                && cfg.codec.codec_tick_ps > 0
                && st.tagger_resolution_ps % cfg.codec.codec_tick_ps == 0,
            format!(
                "codec.codec_tick_ps: {} must divide {name}.tagger_resolution_ps = {} so every gap is tick-aligned",
                cfg.codec.codec_tick_ps, st.tagger_resolution_ps
            ),
        );
    }

    // Diff width against the expected gap distribution.
    let r_det = detection_rate_hz(cfg, &cfg.alice);
    let n_gaps = r_det * cfg.total_duration_s();
    let min_b = minimal_safe_b(r_det, n_gaps, cfg.codec.codec_tick_ps);
    check(
        cfg.budget.b >= min_b,
        format!(
            "budget.b: {} bits cannot hold the expected detection gaps at {:.0} events/s and {} ps ticks; minimal safe b = {min_b}",
            cfg.budget.b, r_det, cfg.codec.codec_tick_ps
        ),
    );
    check(cfg.budget.k <= 24, format!("budget.k: must be <= 24, got {}", cfg.budget.k));
    check(
        cfg.budget.mac_len == 61 && cfg.budget.t1_bits == 64 && cfg.budget.aes_seed_bits == 256,
        "budget: this wire version fixes mac_len = 61, t1_bits = 64, aes_seed_bits = 256".into(),
    );

    // Key-budget feasibility for the first session.
    let r2_first = cfg.keys.initial_qkd_bits as f64 / cfg.run.t_run_s;
    let budget = cfg.budget.budget(cfg.run.t_run_s, r2_first);
    let usage = budget.usage_rate(cfg.budget.q_target);
    check(
        usage <= r2_first,
        format!(
            "budget.q_target: usage rate r1 = {usage} bits/s exceeds the first session's r2 = {r2_first} bits/s"
        ),
    );

    if !cfg.keys.pqc_seed_hex.is_empty() {
        let clean: String = cfg.keys.pqc_seed_hex.chars().filter(|c| !c.is_whitespace()).collect();
        check(
            clean.len() == 32 && clean.chars().all(|c| c.is_ascii_hexdigit()),
            format!("keys.pqc_seed_hex: need 32 hex chars (128 bits), got {:?}", cfg.keys.pqc_seed_hex),
        );
    }

    // Synchronization windows.
    check(
        cfg.sync.fine_bin_ps > 0 && cfg.sync.coarse_bin_ps > 0,
        "sync: bin widths must be > 0".into(),
    );
    check(
        cfg.sync.coarse_bin_ps >= cfg.sync.fine_bin_ps,
        format!(
            "sync.coarse_bin_ps: {} must be at least fine_bin_ps = {}",
            cfg.sync.coarse_bin_ps, cfg.sync.fine_bin_ps
        ),
    );
    check(
        cfg.sync.fine_window_ps <= cfg.sync.max_offset_ps,
        format!(
            "sync.fine_window_ps: {} exceeds max_offset_ps = {}",
            cfg.sync.fine_window_ps, cfg.sync.max_offset_ps
        ),
    );
    let expected_offset = cfg.bob.offset_ps - cfg.alice.offset_ps;
    check(
        expected_offset.abs() <= cfg.sync.max_offset_ps,
        format!(
            "sync.max_offset_ps: {} cannot cover the injected offset {expected_offset} ps",
            cfg.sync.max_offset_ps
        ),
    );
    let blocks = (cfg.total_duration_s() / cfg.sync.drift_block_s).floor();
    check(
        blocks >= 4.0,
        format!(
            "sync.drift_block_s: {} gives {blocks} blocks over {} s; the drift fit needs at least 4",
            cfg.sync.drift_block_s,
            cfg.total_duration_s()
        ),
    );

    // QKD model.
    check(
        (0.0..=1.0).contains(&cfg.qkd.visibility),
        format!("qkd.visibility: must be in [0, 1], got {}", cfg.qkd.visibility),
    );
    check(
        cfg.qkd.sample_fraction > 0.0 && cfg.qkd.sample_fraction <= 1.0,
        format!("qkd.sample_fraction: must be in (0, 1], got {}", cfg.qkd.sample_fraction),
    );
    check(
        cfg.qkd.yield_factor > 0.0 && cfg.qkd.yield_factor <= 1.0,
        format!("qkd.yield_factor: must be in (0, 1], got {}", cfg.qkd.yield_factor),
    );
    check(
        cfg.qkd.pairs_per_session >= 1,
        "qkd.pairs_per_session: must be at least 1".into(),
    );

    issues
}
