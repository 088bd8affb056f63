//! Integration tests for the scenario runner: a fast desk configuration
//! exercised clean, under each attack, and for reproducibility.

use std::fs;

use qstt_cli::config::{validate_config, Attack, ScenarioConfig};
use qstt_cli::scenario::run_scenario;

/// Small, fast scenario: stronger coupling and shorter sessions so four
/// one-second drift blocks still carry solid coincidence peaks.
fn fast_config() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::reference();
    cfg.run.sessions = 4;
    cfg.run.t_run_s = 1.0;
    cfg.run.seed = 1234;
    cfg.source.pair_rate_hz = 4_000.0;
    cfg.alice.loss_db = 3.0;
    cfg.bob.loss_db = 3.0;
    cfg.alice.dark_count_rate_hz = 50.0;
    cfg.bob.dark_count_rate_hz = 50.0;
    cfg.budget.b = 25;
    cfg.budget.q_target = 16;
    cfg.sync.drift_block_s = 1.0;
    cfg.qkd.pairs_per_session = 200_000;
    cfg.qkd.yield_factor = 0.05;
    cfg
}

#[test]
fn fast_config_is_valid() {
    let issues = validate_config(&fast_config());
    assert!(issues.is_empty(), "{issues:?}");
}

#[test]
fn clean_run_recovers_clock_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config();
    let outcome = run_scenario(&cfg, dir.path()).unwrap();
    assert!(outcome.ok, "violations: {:?}", outcome.violations);
    assert_eq!(outcome.mac_accepted, 4);
    assert_eq!(outcome.mac_rejected, 0);

    let offset = outcome.recovered_offset_ps.expect("offset recovered");
    assert!((offset - 10_000.0).abs() < 1_000.0, "offset {offset}");
    let drift = outcome.recovered_drift_ps_per_s.expect("drift recovered");
    assert!((drift - 250.0).abs() < 150.0, "drift {drift}");

    for name in ["histogram.csv", "sessions.csv", "ledger.csv", "summary.txt"] {
        let path = dir.path().join(name);
        assert!(path.exists(), "{name} missing");
        assert!(fs::metadata(&path).unwrap().len() > 0, "{name} empty");
    }
    let hist = fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    assert!(hist.starts_with("delay_ps,counts,phase\n"));
    assert!(hist.contains(",pre\n") && hist.contains(",post\n"));
    let ledger = fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
    assert!(ledger.starts_with("purpose,pool,offset,length,session\n"));

    // Persisted messages replay from disk bit-exactly.
    let bytes = fs::read(dir.path().join("messages/session-001.bin")).unwrap();
    let msg = qstt_core::protocol::wire_decode(&bytes).unwrap();
    assert_eq!(msg.session_id, 1);
    assert_eq!(qstt_core::protocol::wire_encode(&msg).unwrap(), bytes);
}

#[test]
fn runs_are_reproducible() {
    let cfg = fast_config();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    run_scenario(&cfg, d1.path()).unwrap();
    run_scenario(&cfg, d2.path()).unwrap();
    for name in ["histogram.csv", "sessions.csv", "ledger.csv", "summary.txt"] {
        let a = fs::read(d1.path().join(name)).unwrap();
        let b = fs::read(d2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn tamper_attack_is_fully_detected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fast_config();
    cfg.attack = Attack::Tamper(None);
    let outcome = run_scenario(&cfg, dir.path()).unwrap();
    assert!(outcome.ok, "violations: {:?}", outcome.violations);
    assert_eq!(outcome.mac_rejected, 4, "every tampered session must be rejected");
    assert_eq!(outcome.mac_accepted, 0);
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("attack detection   : 100%"), "{summary}");
}

#[test]
fn drop_mac_attack_is_fully_detected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fast_config();
    cfg.attack = Attack::DropMac;
    let outcome = run_scenario(&cfg, dir.path()).unwrap();
    assert!(outcome.ok, "violations: {:?}", outcome.violations);
    assert_eq!(outcome.mac_rejected, 4);
}

#[test]
fn replay_attack_detected_after_first_session() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fast_config();
    cfg.attack = Attack::Replay;
    let outcome = run_scenario(&cfg, dir.path()).unwrap();
    assert!(outcome.ok, "violations: {:?}", outcome.violations);
    // Session 1 has nothing to replay; sessions 2..4 deliver stale bytes.
    assert_eq!(outcome.mac_accepted, 1);
    assert_eq!(outcome.mac_rejected, 3);
}

/// A photon-channel delay is invisible to authentication; the estimated
/// offset absorbs it. This pins which layer covers which attack.
#[test]
fn photon_delay_shifts_recovered_offset() {
    let base_dir = tempfile::tempdir().unwrap();
    let base = run_scenario(&fast_config(), base_dir.path()).unwrap();
    let base_offset = base.recovered_offset_ps.unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fast_config();
    cfg.attack = Attack::Delay(5_000);
    let outcome = run_scenario(&cfg, dir.path()).unwrap();
    assert!(outcome.ok, "violations: {:?}", outcome.violations);
    assert_eq!(outcome.mac_rejected, 0, "authentication must not fire on a photon delay");
    let offset = outcome.recovered_offset_ps.unwrap();
    assert!(
        ((offset - base_offset) - 5_000.0).abs() < 500.0,
        "delay not absorbed into the offset: base {base_offset}, attacked {offset}"
    );
}

#[test]
fn net_rate_identity_holds_in_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config();
    let outcome = run_scenario(&cfg, dir.path()).unwrap();
    assert_eq!(outcome.reports.len(), 4);
    for r in &outcome.reports {
        assert_eq!(
            r.net_rate_bits_per_s,
            (r.gross_key_bits as f64 - r.consumed_bits as f64) / cfg.run.t_run_s,
            "net-rate identity violated in session {}",
            r.session_id
        );
        // Reference consumption at b = 25, |Q| = 16, k = 6:
        // 384 + 64 + 61 + 256 + 400 = 1165 QKD bits.
        assert_eq!(r.consumed_bits, 1165);
    }
}

#[test]
fn invalid_configs_are_reported_with_key_names() {
    let mut cfg = fast_config();
    cfg.budget.b = 8;
    let issues = validate_config(&cfg);
    assert!(issues.iter().any(|i| i.starts_with("budget.b")), "{issues:?}");

    let mut cfg = fast_config();
    cfg.sync.drift_block_s = 10.0;
    let issues = validate_config(&cfg);
    assert!(issues.iter().any(|i| i.starts_with("sync.drift_block_s")), "{issues:?}");

    let mut cfg = fast_config();
    cfg.qkd.visibility = 1.5;
    let issues = validate_config(&cfg);
    assert!(issues.iter().any(|i| i.starts_with("qkd.visibility")), "{issues:?}");
}
