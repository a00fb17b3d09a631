//! Monte Carlo driver: configuration, trials, sweeps and result files.

pub mod config;
pub mod output;
pub mod stats;
pub mod sweep;
pub mod trial;

pub use config::SystemConfig;
pub use sweep::{run_point, run_sweep, ResultRow, SweepOptions, SweepResult};
pub use trial::{Simulator, TrialReport};
