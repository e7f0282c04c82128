//! Experiment orchestration: configs, trials, metrics and logs.

pub mod config;
pub mod experiment;
pub mod logs;
pub mod scenario;
pub mod trial;

pub use config::{
    parse_config, parse_config_str, parse_config_with, ExperimentKind, Scenario, ScenarioConfig,
};
pub use experiment::{run_experiment, ExperimentResult, ImpactRow, Summary, SweepSummary};
pub use logs::emit_logs;
pub use scenario::{ContactSpec, Generator};
pub use trial::{
    plan_trial, run_trial, Carry, ContactOutcome, Plan, TickRecord, TrialReport, TrialRun,
};
