//! Simulation and analysis of deterministic time-bin GHZ state generation
//! from a single quantum-dot electron spin.

pub mod bloch;
pub mod channels;
pub mod error;
pub mod fits;
pub mod mc;
pub mod noise;
pub mod protocol;
pub mod quantum;

pub use error::{Error, Result};
