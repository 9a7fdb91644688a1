//! Charge-noise analysis for offset-charge-sensitive transmons: level
//! structure, synthetic data, state classification, spectral analysis and
//! electrostatic sensitivity maps.

pub mod classify;
pub mod error;
pub mod exec;
pub mod fields;
pub mod io;
pub mod spectral;
pub mod spectrum;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
