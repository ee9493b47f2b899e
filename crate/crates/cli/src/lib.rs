//! Batch front-end: flat configuration files, deterministic replica fan-out
//! and CSV/JSON/gnuplot artifacts.

pub mod config;
pub mod run;

pub use config::{parse_grid, ConfigFile, Diagnostic, Experiment, RunConfig};
pub use run::{results_csv, run, RunError, RunOutcome};
