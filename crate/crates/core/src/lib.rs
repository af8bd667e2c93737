//! Failure-distribution sampling for sequential systems.
//!
//! Safety validation is posed as inference: disturbances `x` drive a deterministic closed-loop
//! rollout, and we sample `p(x | failure)` through a smoothed posterior whose gradient is taken
//! through the whole rollout by reverse-mode autodiff.

pub mod autodiff;
pub mod cli;
pub mod environments;
pub mod error;
pub mod metrics;
pub mod samplers;
pub mod scenario;

pub use error::{Error, Result};
pub use scenario::{Rollout, Scenario, SmoothingConfig};
