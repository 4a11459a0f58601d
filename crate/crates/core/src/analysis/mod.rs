//! Analysis suite: stealthiness bound, minimum effective attack time,
//! deviation series, empirical incremental-stability and Lipschitz
//! constants, equal-covariance Gaussian KL, fake-state replay, and alarm
//! statistics.
//!
//! Everything operates on recorded runs or on pure inputs; Monte-Carlo
//! aggregation is order-independent.

mod alarm;
mod bound;
mod deviation;
mod ies;
mod lipschitz;
mod replay;

pub use alarm::{alarm_stats, AlarmStats, DetectorRates};
pub use bound::{
    gaussian_kl, min_effective_step, min_effective_step_paper_variant, stealth_bound,
    StealthBoundInputs, StealthBoundResult,
};
pub use deviation::{deviation_series, DeviationSeries};
pub use ies::{estimate_ies_constants, ies_experiment, GapTrace, IesFit};
pub use lipschitz::{
    controller_lipschitz, estimate_lipschitz, fusion_lipschitz, sensor_lipschitz,
};
pub(crate) use lipschitz::controller_gap;
pub use replay::{fake_replay, fake_replay_error, FakeReplayReport, REPLAY_TOLERANCE};
