use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use qstt_cli::config::{validate_config, Attack, ScenarioConfig};
use qstt_cli::scenario::run_scenario;

/// Secure time-transfer laboratory: runs seeded end-to-end sessions
/// (simulate, encrypt, transmit, attack, decrypt, synchronize) and writes
/// histogram.csv, sessions.csv, ledger.csv, and summary.txt.
#[derive(Debug, Parser)]
#[command(name = "qstt", version, about)]
struct Cli {
    /// TOML scenario file; defaults to the built-in reference scenario.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,

    /// Session-count override.
    #[arg(long)]
    sessions: Option<u32>,

    /// Attack to inject: none, tamper[:BIT], replay, delay:PS, drop-mac.
    #[arg(long)]
    attack: Option<String>,

    /// Output directory for the CSV artifacts and summary.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Authenticate only (t1*, dt_enc, dt_enc_is) instead of the whole
    /// message.
    #[arg(long)]
    strict_paper_mac: bool,

    /// Validate the configuration and exit without running.
    #[arg(long)]
    validate_only: bool,
}

fn build_config(cli: &Cli) -> Result<ScenarioConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::reference(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(sessions) = cli.sessions {
        cfg.run.sessions = sessions;
    }
    if let Some(attack) = &cli.attack {
        cfg.attack = Attack::parse(attack)?;
    }
    cfg.strict_paper_mac = cli.strict_paper_mac;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QSTT_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();

    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return ExitCode::from(2);
        }
    };

    let issues = validate_config(&cfg);
    if !issues.is_empty() {
        eprintln!("configuration invalid:");
        for issue in &issues {
            eprintln!("  - {issue}");
        }
        return ExitCode::from(2);
    }
    if cli.validate_only {
        println!("configuration OK");
        return ExitCode::SUCCESS;
    }

    match run_scenario(&cfg, &cli.out) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            println!("artifacts written to {}", cli.out.display());
            if outcome.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("scenario failed: {e:#}");
            ExitCode::from(2)
        }
    }
}
