//! Direct position estimation and OTDoA baselines for 5G NR PRS.

pub mod channel;
pub mod config;
pub mod dft;
pub mod dpe;
pub mod error;
pub mod montecarlo;
pub mod otdoa;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod waveform;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
