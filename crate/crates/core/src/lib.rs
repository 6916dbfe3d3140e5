//! Delay-robust forecasting with a residual bottleneck mixing network.
//!
//! The pipeline simulates zero-order-hold staleness on multivariate series,
//! trains the mixing network to map corrupted history windows to clean future
//! rows, and evaluates it under a strictly non-overlapping protocol.

pub mod data;
pub mod delay_sim;
pub mod error;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
