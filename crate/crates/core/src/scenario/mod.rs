//! Scenario configs, the run loop and its outputs.

pub mod config;
pub mod metrics;
pub mod runner;
pub mod summary;

pub use config::{builtin_scenario, load_config, ConfigError, RsuSpec, ScenarioConfig};
pub use metrics::{read_events_csv, read_metrics_csv, EventKind, EventRecord, MetricsRow};
pub use runner::{run, run_with, write_outputs, RunError, RunOptions, RunOutput};
pub use summary::{summarize, window_bytes, window_mean, PhaseSummary, RunSummary};
