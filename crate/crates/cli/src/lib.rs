//! Scenario configuration and execution for the `qstt` binary.

pub mod config;
pub mod scenario;

pub use config::{validate_config, Attack, ScenarioConfig};
pub use scenario::{run_scenario, RunOutcome};
