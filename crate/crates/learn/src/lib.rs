//! Learned transmitters and receivers for mmWave positioning.
//!
//! [`tape`] is a small reverse-mode differentiation engine over 2-D tensors,
//! [`mlp`] and [`optim`] build networks and train them, and [`e2e`] wires
//! beamformer and decoder networks through a differentiable pilot channel.

pub mod checkpoint;
pub mod e2e;
pub mod eval;
pub mod mlp;
pub mod optim;
pub mod tape;

mod error;

pub use error::{Error, Result};
