//! Scenario configuration, RNG stream management, the closed-loop
//! simulation driver, Monte-Carlo fan-out, persistence and report files.

pub mod config;
pub mod export;
pub mod monte_carlo;
pub mod record;
pub mod rng;
pub mod sim;
pub mod svg;

pub use config::{
    AttackKind, DetectorSection, DriftSetting, ScenarioConfig, ThresholdSetting,
};
pub use export::{
    load_run, read_run_csv, run_csv_name, save_run, sidecar_name, write_alarm_rates_csv,
    write_deviation_csv, write_mean_deviation_csv, write_noise_sidecar, write_run_csv,
};
pub use monte_carlo::{calibration_runs, run_monte_carlo, McAggregate};
pub use record::{ReplayCheckpoint, RunMeta, RunRecord, StepRecord};
pub use rng::NoiseStreams;
pub use sim::{
    default_initial, run_estimator_trace, run_perturbed_pair, run_scenario, simulate_collect,
    simulate_loop, InitialConditions, LightStep, LoopModels, NoiseSource, OperatingPoint,
    RecordedNoise, ReferenceMode, RngNoise, StepOutput,
};

#[cfg(test)]
pub use record::test_support;
