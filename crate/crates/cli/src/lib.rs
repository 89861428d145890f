//! Experiment driver: TOML-configured calibration, sweeps, coherence and
//! cost reports over the gated-inference engine.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod report;

pub use commands::{cmd_calibrate, cmd_coherence, cmd_costmodel, cmd_report, cmd_sweep};
pub use config::{ExperimentConfig, ModeKind, Overrides, Workspace};
pub use error::{CliError, Result};
pub use report::{Cell, ReportTable};
