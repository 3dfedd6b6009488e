//! Experiments that check the limit statements by Monte Carlo, their
//! configuration files and reports.

pub mod config;
pub mod experiments;
pub mod report;

pub use config::{ExperimentConfig, Provenance, Threshold};
pub use experiments::{calibrate_main_theorem, run, Outcome, EXPERIMENTS};
pub use report::{ExperimentReport, Metrics, Rule, Timing, Verdict};
