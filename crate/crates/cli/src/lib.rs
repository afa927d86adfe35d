//! Experiment runner and command-line plumbing for the `deepkriging` binary.

pub mod config;
pub mod error;
pub mod experiments;
pub mod fixture;
pub mod report;

pub use config::Settings;
pub use error::{CliError, Result};
pub use experiments::{run_and_write, run_experiment, ExperimentName, ExperimentSpec, Method, ProbeDesign};
pub use report::{emit_plot_data, write_report, PlotData, PlotKind, Report};
