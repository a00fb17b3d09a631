//! Link-level Monte Carlo simulator for OTFS-based unsourced multiple access
//! over doubly-dispersive (delay-Doppler) channels.

pub mod channel;
pub mod codec;
pub mod cs_amp;
pub mod error;
pub mod rx_data;
pub mod sim;
pub mod tx;
pub mod zak;

pub use error::{Error, Result};
