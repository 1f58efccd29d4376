//! Scenario configuration, the end-to-end pipeline and appendix replication.

pub mod config;
pub mod report;
pub mod scenario;

pub use config::{parse_config, ConfigError, Interaction, ScenarioConfig, StudySpec};
pub use report::{replicate_appendix, AppendixReport, ReportRow, Tolerance};
pub use scenario::{analyze_scenario, run_scenario, simulate_studies, HarnessError, ScenarioResult, StudyPair};
