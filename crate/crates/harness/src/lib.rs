//! Experiment orchestration for the mmWave positioning simulator: TOML
//! configuration, sweeps over SNR and hardware impairments, training and
//! evaluation of the learned systems, and CSV output with JSON sidecars.

pub mod config;
mod error;
pub mod experiments;
pub mod output;

pub use config::ExperimentConfig;
pub use error::HarnessError;
