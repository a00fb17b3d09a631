use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("cyclic prefix of length {cp_len} does not fit a signal of length {len}")]
    CyclicPrefix { cp_len: usize, len: usize },

    #[error("delay-Doppler shift (tau={tau}, nu={nu}) outside grid (tau_max={tau_max}, nu_max={nu_max})")]
    ShiftOutOfGrid {
        tau: usize,
        nu: i64,
        tau_max: usize,
        nu_max: usize,
    },

    #[error("cannot draw {paths} distinct paths from a grid of {cells} shifts")]
    TooManyPaths { paths: usize, cells: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("polar code: {0}")]
    Polar(String),

    #[error("{symbols} symbols do not fit in {slots} slots")]
    Padding { symbols: usize, slots: usize },

    #[error("AMP diverged at iteration {iteration}")]
    AmpDiverged { iteration: usize },

    #[error("user has no channel paths")]
    NoPaths,

    #[error("sensing matrix file: {0}")]
    SensingFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
