//! Closed-loop simulation driver.
//!
//! One step runs: sensors sample -> attack injects (GPS ticks) -> fusion
//! -> detectors -> controller -> plant step. Everything is a pure
//! function of `(config, seed)`; the attack toggle only gates the
//! injection, so paired runs consume bit-identical noise streams.
//!
//! Step indexing: the run starts at `k = -warmup_steps` with the vehicle
//! hovering at the mission start; the mission and the attack clock begin
//! at `k = 0`. The attack impacts the plant one step later (the injected
//! measurement first alters `u_0`, which steps the plant into `x_1`).

use nalgebra::Vector3;

use crate::attack::{attack_offset, inject, AttackConfig};
use crate::control::{controller_step, controller_step_at, ControllerState, PidGains, Waypoint};
use crate::detection::{chi2_step, cusum_step, DetectorConfig, DetectorState};
use crate::dynamics::{
    step_discrete, DragModel, ProcessNoiseModel, RotorCommand, StateVector, VehicleParams,
    Vector12,
};
use crate::error::SimError;
use crate::estimation::{fuse_step, EstimatorState};
use crate::harness::config::ScenarioConfig;
use crate::harness::record::{ReplayCheckpoint, RunMeta, RunRecord, StepRecord};
use crate::harness::rng::{standard_normal_12, standard_normal_3, standard_normal_6, NoiseStreams};
use crate::sensors::{
    sensor_schedule, GpsNoiseModel, ImuModel, ScheduleSlot, SensorFrame, TimingConfig, Vector6,
};

/// All validated models a run needs, built once from a config.
pub struct LoopModels {
    pub vehicle: VehicleParams,
    pub timing: TimingConfig,
    pub process_noise: ProcessNoiseModel,
    pub gps: GpsNoiseModel,
    pub imu: ImuModel,
    pub gains: PidGains,
    pub mission: Vec<Waypoint>,
    pub mission_start: Vector3<f64>,
    pub drag: Option<DragModel>,
    pub attack: AttackConfig,
    pub detector: DetectorConfig,
    pub est_initial_cov: f64,
    pub est_init_noise_std: f64,
    pub warmup_steps: i64,
    pub horizon_steps: i64,
}

impl LoopModels {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        Self::build_with_detector(cfg, cfg.detector_config()?)
    }

    /// Calibration variant: detector thresholds at infinity so statistics
    /// are collected without alarms.
    pub fn build_unarmed(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        Self::build_with_detector(cfg, cfg.detector_config_unarmed()?)
    }

    fn build_with_detector(
        cfg: &ScenarioConfig,
        detector: DetectorConfig,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        let timing = cfg.timing()?;
        Ok(LoopModels {
            vehicle: cfg.vehicle,
            timing,
            process_noise: cfg.process_noise_model()?,
            gps: cfg.gps_model()?,
            imu: cfg.imu_model()?,
            gains: cfg.controller,
            mission: cfg.mission_waypoints(),
            mission_start: cfg.mission_start(),
            drag: cfg.drag(),
            attack: cfg.attack_config(timing.td),
            detector,
            est_initial_cov: cfg.estimator.initial_cov,
            est_init_noise_std: cfg.estimator.init_noise_std,
            warmup_steps: (cfg.sim.warmup / timing.td).round() as i64,
            horizon_steps: (cfg.sim.horizon / timing.td).round() as i64,
        })
    }
}

/// Where the controller reference comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// Hover at the mission start for k < 0, then fly the mission.
    MissionAfterWarmup,
    /// Hold the mission start forever (incremental-stability rollouts).
    HoldStart,
}

/// Per-run noise supplier. Within a step the loop calls `begin_step`,
/// then `imu` (always), `gps` (on ticks), and `process` last.
pub trait NoiseSource {
    fn begin_step(&mut self, k: i64);
    fn process(&mut self) -> Vector12;
    fn imu(&mut self) -> Vector6;
    fn gps(&mut self) -> Vector3<f64>;
}

/// Live noise from the per-run seeded streams.
pub struct RngNoise {
    streams: NoiseStreams,
    process_model: ProcessNoiseModel,
    gps_model: GpsNoiseModel,
    imu_model: ImuModel,
}

impl RngNoise {
    pub fn new(seed: u64, models: &LoopModels) -> Self {
        RngNoise {
            streams: NoiseStreams::new(seed),
            process_model: models.process_noise.clone(),
            gps_model: models.gps.clone(),
            imu_model: models.imu.clone(),
        }
    }

    /// Initial-estimate offset draw (scaled standard normal, own stream).
    pub fn init_offset(&mut self, std: f64) -> Vector12 {
        standard_normal_12(&mut self.streams.init) * std
    }
}

impl NoiseSource for RngNoise {
    fn begin_step(&mut self, _k: i64) {}

    fn process(&mut self) -> Vector12 {
        self.process_model.correlate(&standard_normal_12(&mut self.streams.process))
    }

    fn imu(&mut self) -> Vector6 {
        self.imu_model.correlate(&standard_normal_6(&mut self.streams.imu))
    }

    fn gps(&mut self) -> Vector3<f64> {
        self.gps_model.correlate(&standard_normal_3(&mut self.streams.gps))
    }
}

/// Noise replayed from a recorded run; used by the fake-state replay.
pub struct RecordedNoise<'r> {
    steps: &'r [StepRecord],
    cursor: usize,
}

impl<'r> RecordedNoise<'r> {
    pub fn new(record: &'r RunRecord, from_k: i64) -> Result<Self, SimError> {
        let start = record
            .steps
            .iter()
            .position(|s| s.k == from_k)
            .ok_or_else(|| SimError::RecordFormat(format!("step {from_k} not in record")))?;
        let steps = &record.steps[start..];
        for (i, s) in steps.iter().enumerate() {
            if s.k != from_k + i as i64 {
                return Err(SimError::RecordFormat("record steps are not contiguous".to_string()));
            }
            if s.gps.is_some() != s.n_gps.is_some() {
                return Err(SimError::RecordFormat(
                    "record lacks GPS noise draws for replay".to_string(),
                ));
            }
        }
        Ok(RecordedNoise { steps, cursor: 0 })
    }
}

impl NoiseSource for RecordedNoise<'_> {
    fn begin_step(&mut self, k: i64) {
        let first = self.steps[0].k;
        self.cursor = (k - first) as usize;
        assert!(self.cursor < self.steps.len(), "replay ran past the recorded horizon");
    }

    fn process(&mut self) -> Vector12 {
        self.steps[self.cursor].w
    }

    fn imu(&mut self) -> Vector6 {
        self.steps[self.cursor].n_imu
    }

    fn gps(&mut self) -> Vector3<f64> {
        self.steps[self.cursor].n_gps.expect("validated at construction")
    }
}

/// Loop state at the start of a run.
#[derive(Debug, Clone)]
pub struct InitialConditions {
    pub k_start: i64,
    pub truth: StateVector,
    pub est: EstimatorState,
    pub ctrl: ControllerState,
    pub u_prev: RotorCommand,
    pub det: DetectorState,
}

/// Everything one step produces, passed by reference to the observer.
pub struct StepOutput<'a> {
    pub k: i64,
    pub t: f64,
    /// Plant state at the start of the step.
    pub truth: &'a StateVector,
    /// Estimator state entering the step (before prediction).
    pub prev_est: &'a EstimatorState,
    /// Estimator state after this step's correction.
    pub estimate: &'a EstimatorState,
    /// Controller state entering the step.
    pub prev_ctrl: &'a ControllerState,
    /// Controller state after this step.
    pub ctrl: &'a ControllerState,
    /// Command applied at the previous step (used by the predictor).
    pub u_prev: &'a RotorCommand,
    /// Command produced this step (drives the plant into k+1).
    pub command: &'a RotorCommand,
    /// Delivered (post-attack) measurements.
    pub frame: &'a SensorFrame,
    pub attack: Option<Vector3<f64>>,
    pub innovation_dof: usize,
    pub chi2_stat: f64,
    pub chi2_alarm: bool,
    pub cusum_stat: f64,
    pub cusum_alarm: bool,
    pub w: &'a Vector12,
    pub n_imu: &'a Vector6,
    pub n_gps: Option<&'a Vector3<f64>>,
    /// Present on the attack-start step.
    pub checkpoint: Option<&'a ReplayCheckpoint>,
}

/// Drive the closed loop from `init.k_start` to `end_step` (exclusive),
/// invoking the observer once per step.
pub fn simulate_loop<F: FnMut(&StepOutput)>(
    models: &LoopModels,
    init: InitialConditions,
    end_step: i64,
    attack: Option<&AttackConfig>,
    reference: ReferenceMode,
    noise: &mut dyn NoiseSource,
    mut on_step: F,
) -> Result<(), SimError> {
    let td = models.timing.td;
    let det_cfg = &models.detector;
    let mut truth = init.truth;
    let mut est = init.est;
    let mut ctrl = init.ctrl;
    let mut u_prev = init.u_prev;
    let mut det = init.det;

    for k in init.k_start..end_step {
        noise.begin_step(k);

        // Sensors sample the true state; draws are consumed on a fixed
        // schedule so the attack toggle cannot shift the streams.
        let imu_draw = noise.imu();
        let is_tick = sensor_schedule(k, &models.timing) == ScheduleSlot::ImuAndGps;
        let gps_draw = if is_tick { Some(noise.gps()) } else { None };
        let clean = SensorFrame::sample(k, &truth, &models.timing, &imu_draw, gps_draw.as_ref());

        // FDI layer.
        let mut delivered = clean;
        let mut offset = None;
        if is_tick {
            if let Some(cfg) = attack {
                if let Some(a) = attack_offset(cfg, k, td) {
                    delivered.gps = delivered.gps.map(|g| inject(&g, &a));
                    offset = Some(a);
                }
            }
        }

        // Replay anchor, captured on entry to the attack-start step in
        // attacked and nominal runs alike.
        let checkpoint = if k == models.attack.start_step {
            Some(ReplayCheckpoint {
                k,
                truth,
                est_x: est.x_hat,
                est_cov: est.cov,
                ctrl,
                u_prev,
            })
        } else {
            None
        };

        // Fusion consumes exactly the delivered measurements.
        let (new_est, innovation, s_cov) = fuse_step(
            &est,
            &u_prev,
            &delivered,
            td,
            &models.vehicle,
            models.process_noise.sigma(),
            &models.gps,
            &models.imu,
        )?;

        // Detectors.
        let dof = innovation.len();
        let (chi2_stat, chi2_alarm) = chi2_step(&innovation, &s_cov, det_cfg.chi2_threshold)?;
        let drift = det_cfg.drift.value(dof);
        let (cusum_stat, cusum_alarm) = cusum_step(
            &mut det,
            chi2_stat,
            drift,
            det_cfg.cusum_threshold,
            det_cfg.reset_on_alarm,
        );

        // Controller.
        let (new_ctrl, cmd) = match reference {
            ReferenceMode::HoldStart => controller_step_at(
                &ctrl,
                &new_est.x_hat,
                &models.mission_start,
                &models.gains,
                &models.vehicle,
                td,
            ),
            ReferenceMode::MissionAfterWarmup => {
                if k < 0 {
                    controller_step_at(
                        &ctrl,
                        &new_est.x_hat,
                        &models.mission_start,
                        &models.gains,
                        &models.vehicle,
                        td,
                    )
                } else {
                    controller_step(
                        &ctrl,
                        &new_est.x_hat,
                        &models.mission,
                        &models.gains,
                        &models.vehicle,
                        td,
                    )
                }
            }
        };
        let u_applied = cmd.saturated(models.vehicle.rotor_max_sq);

        // Plant.
        let w = noise.process();
        let next_truth =
            step_discrete(&truth, &u_applied, td, &w, &models.vehicle, models.drag.as_ref(), k)?;

        on_step(&StepOutput {
            k,
            t: k as f64 * td,
            truth: &truth,
            prev_est: &est,
            estimate: &new_est,
            prev_ctrl: &ctrl,
            ctrl: &new_ctrl,
            u_prev: &u_prev,
            command: &u_applied,
            frame: &delivered,
            attack: offset,
            innovation_dof: dof,
            chi2_stat,
            chi2_alarm,
            cusum_stat,
            cusum_alarm,
            w: &w,
            n_imu: &imu_draw,
            n_gps: gps_draw.as_ref(),
            checkpoint: checkpoint.as_ref(),
        });

        truth = next_truth;
        est = new_est;
        ctrl = new_ctrl;
        u_prev = u_applied;
    }
    Ok(())
}

/// Standard initial conditions: at rest at the mission start, estimate
/// offset by a draw from the init stream, hover command applied before.
pub fn default_initial(models: &LoopModels, noise: &mut RngNoise, k_start: i64) -> InitialConditions {
    let truth = StateVector::at_position(models.mission_start);
    let offset = noise.init_offset(models.est_init_noise_std);
    let est = EstimatorState {
        x_hat: StateVector(truth.0 + offset),
        cov: crate::dynamics::Matrix12::identity() * models.est_initial_cov,
        step: k_start - 1,
    };
    InitialConditions {
        k_start,
        truth,
        est,
        ctrl: ControllerState::default(),
        u_prev: RotorCommand::hover(&models.vehicle).saturated(models.vehicle.rotor_max_sq),
        det: DetectorState::default(),
    }
}

/// Run one full scenario and record every step.
///
/// `attack_enabled` gates the injection only; everything else, including
/// all noise draws, is identical for both values.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    seed: u64,
    attack_enabled: bool,
) -> Result<RunRecord, SimError> {
    let models = LoopModels::build(cfg)?;
    let mut noise = RngNoise::new(seed, &models);
    let init = default_initial(&models, &mut noise, -models.warmup_steps);
    let effective = AttackConfig {
        enabled: models.attack.enabled && attack_enabled,
        ..models.attack
    };

    let total = (models.warmup_steps + models.horizon_steps) as usize;
    let mut steps = Vec::with_capacity(total);
    let mut checkpoint = None;
    simulate_loop(
        &models,
        init,
        models.horizon_steps,
        Some(&effective),
        ReferenceMode::MissionAfterWarmup,
        &mut noise,
        |out| {
            if let Some(cp) = out.checkpoint {
                checkpoint = Some(cp.clone());
            }
            steps.push(StepRecord {
                k: out.k,
                t: out.t,
                truth: *out.truth,
                estimate: out.estimate.x_hat,
                ctrl: *out.ctrl,
                imu: out.frame.imu,
                gps: out.frame.gps,
                attack: out.attack,
                innovation_dof: out.innovation_dof as u8,
                chi2_stat: out.chi2_stat,
                chi2_alarm: out.chi2_alarm,
                cusum_stat: out.cusum_stat,
                cusum_alarm: out.cusum_alarm,
                w: *out.w,
                n_imu: *out.n_imu,
                n_gps: out.n_gps.copied(),
            });
        },
    )?;

    Ok(RunRecord {
        meta: RunMeta {
            seed,
            attack_enabled: effective.enabled,
            config_digest: cfg.digest(),
            warmup_steps: models.warmup_steps,
            horizon_steps: models.horizon_steps,
            td: models.timing.td,
        },
        steps,
        checkpoint,
    })
}

/// Lightweight per-step view for replay comparison and gap rollouts.
#[derive(Debug, Clone)]
pub struct LightStep {
    pub k: i64,
    pub truth: StateVector,
    pub estimate: StateVector,
    pub ctrl: ControllerState,
}

/// Drive the loop from explicit initial conditions and collect light
/// steps; the fake-state replay runs through here with recorded noise.
pub fn simulate_collect(
    models: &LoopModels,
    init: InitialConditions,
    end_step: i64,
    attack: Option<&AttackConfig>,
    noise: &mut dyn NoiseSource,
) -> Result<Vec<LightStep>, SimError> {
    let mut out = Vec::with_capacity((end_step - init.k_start).max(0) as usize);
    simulate_loop(
        models,
        init,
        end_step,
        attack,
        ReferenceMode::MissionAfterWarmup,
        noise,
        |step| {
            out.push(LightStep {
                k: step.k,
                truth: *step.truth,
                estimate: step.estimate.x_hat,
                ctrl: *step.ctrl,
            });
        },
    )?;
    Ok(out)
}

/// Paired perturbed rollout for the incremental-stability fit.
///
/// Both rollouts use the same seed (identical noise and references, with
/// the reference held at the mission start) and differ only in the plant
/// initial state, shifted by `delta`. Returns the closed-loop state gap
/// sampled every `stride` steps.
pub fn run_perturbed_pair(
    cfg: &ScenarioConfig,
    seed: u64,
    delta: &Vector12,
    horizon_s: f64,
    stride: usize,
) -> Result<Vec<f64>, SimError> {
    let models = LoopModels::build_unarmed(cfg)?;
    let end_step = (horizon_s / models.timing.td).round() as i64;

    let rollout = |perturb: Option<&Vector12>| -> Result<Vec<LightStep>, SimError> {
        let mut noise = RngNoise::new(seed, &models);
        let mut init = default_initial(&models, &mut noise, 0);
        if let Some(d) = perturb {
            init.truth = StateVector(init.truth.0 + d);
        }
        let mut out = Vec::new();
        simulate_loop(
            &models,
            init,
            end_step,
            None,
            ReferenceMode::HoldStart,
            &mut noise,
            |step| {
                if (step.k as usize) % stride == 0 {
                    out.push(LightStep {
                        k: step.k,
                        truth: *step.truth,
                        estimate: step.estimate.x_hat,
                        ctrl: *step.ctrl,
                    });
                }
            },
        )?;
        Ok(out)
    };

    let base = rollout(None)?;
    let perturbed = rollout(Some(delta))?;
    Ok(base
        .iter()
        .zip(&perturbed)
        .map(|(a, b)| {
            ((a.truth.0 - b.truth.0).norm_squared()
                + (a.estimate.0 - b.estimate.0).norm_squared()
                + crate::analysis::controller_gap(&a.ctrl, &b.ctrl).powi(2))
            .sqrt()
        })
        .collect())
}

/// Harvest pre-fusion operating points (estimator state, controller state,
/// previous command, delivered frame) at post-warm-up steps of a nominal
/// rollout; the empirical Lipschitz probes perturb around these.
pub type OperatingPoint = (EstimatorState, ControllerState, RotorCommand, SensorFrame);

pub fn run_estimator_trace(
    cfg: &ScenarioConfig,
    seed: u64,
    horizon_s: f64,
) -> Result<Vec<OperatingPoint>, SimError> {
    let models = LoopModels::build_unarmed(cfg)?;
    let end_step = ((horizon_s / models.timing.td).round() as i64).min(models.horizon_steps);
    let mut noise = RngNoise::new(seed, &models);
    let init = default_initial(&models, &mut noise, -models.warmup_steps);
    let mut points = Vec::new();
    simulate_loop(
        &models,
        init,
        end_step,
        None,
        ReferenceMode::MissionAfterWarmup,
        &mut noise,
        |step| {
            if step.k >= 0 && step.frame.gps.is_some() {
                points.push((
                    step.prev_est.clone(),
                    *step.prev_ctrl,
                    *step.u_prev,
                    *step.frame,
                ));
            }
        },
    )?;
    Ok(points)
}
