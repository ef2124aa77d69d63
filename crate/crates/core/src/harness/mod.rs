//! Scenario registry, configuration files and experiment orchestration.

pub mod run;
pub mod scenario;

pub use run::{run_experiment, RunSummary};
pub use scenario::{builtin, load_scenario, parse_scenario, Experiment, Scenario};
