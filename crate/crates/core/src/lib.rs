//! Closed-loop quadcopter simulation with a GPS false-data-injection layer.
//!
//! The crate is organized around the stages of the control loop:
//!
//! - [`dynamics`]: rigid-body model, motor mixing, noisy Euler stepping
//! - [`sensors`]: multirate GPS/IMU measurement generation
//! - [`estimation`]: EKF sensor fusion running at the IMU rate
//! - [`control`]: cascade PID (position loop feeding an attitude loop)
//! - [`attack`]: additive false-data injection on the GPS channel
//! - [`detection`]: chi-square and CUSUM residual detectors
//! - [`analysis`]: stealthiness bound, incremental-stability fits,
//!   deviation series, fake-state replay and alarm statistics
//! - [`harness`]: scenario config, seeded RNG streams, the simulation
//!   driver, Monte-Carlo fan-out, CSV/SVG export and record persistence
//!
//! Every run is a pure function of `(config, seed)`; paired runs share
//! noise realizations so trajectory differences isolate the attack.

pub mod analysis;
pub mod attack;
pub mod control;
pub mod detection;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod sensors;

pub use error::SimError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SimError>;
