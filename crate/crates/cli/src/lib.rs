//! Experiment orchestration for the `nht` binary: config ingestion, single runs,
//! parallel sweeps, phase grids and CSV/JSON artifacts.

pub mod calc;
pub mod cell;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod summary;

pub use cell::{CellKey, CellRecord};
pub use config::{load_config, ExperimentConfig, Overrides};
pub use error::{CliError, Result};
pub use experiment::{resummarize, run_single, run_sweep, SweepOutcome};
pub use summary::SweepSummary;
