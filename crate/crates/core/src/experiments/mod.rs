//! Scenario configuration, single runs, metrics and the five experiment
//! families with CSV output.

pub mod config;
pub mod metrics;
pub mod network;
pub mod output;
pub mod runner;

pub use config::{load_config, ScenarioConfig};
pub use metrics::{goodput, normalized_throughput, pt_ratio, RunMetrics, Summary};
pub use network::{simulate, simulate_traced};
pub use runner::{run_experiment, ExperimentTable, Family};
