//! Multi-flow, multi-server age-of-information scheduling simulator.

pub mod coupling;
pub mod distributions;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod error;
pub mod policies;
pub mod rng;
pub mod sawtooth;
pub mod stats;
pub mod traffic;
pub mod types;

pub use error::{Error, Result};
