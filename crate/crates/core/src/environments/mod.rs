//! Validation environments: the one-step toy, the inverted pendulum, the crosswalk and the
//! partially observed lander.

pub mod crosswalk;
pub mod ekf;
pub mod lander;
pub mod mlp;
pub mod pendulum;
pub mod toy;

pub use crosswalk::{Crosswalk, CrosswalkParams};
pub use lander::{Lander, LanderParams};
pub use mlp::MlpPolicy;
pub use pendulum::{Pendulum, PendulumParams, PendulumPolicy};
pub use toy::Toy;
