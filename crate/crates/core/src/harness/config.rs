//! Scenario configuration: a fully explicit TOML file.
//!
//! Every section and key is required and unknown keys are rejected, so a
//! typo can never silently fall back to a default. `ScenarioConfig::default()`
//! is the shipped square-mission scenario; `emit` serializes any config
//! back to TOML such that `parse(emit(cfg)) == cfg`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AttackConfig, AttackSignal};
use crate::control::{PidGains, Waypoint};
use crate::detection::{DetectorConfig, DriftSpec};
use crate::dynamics::{DragModel, ProcessNoiseModel, VehicleParams};
use crate::error::SimError;
use crate::sensors::{GpsNoiseModel, ImuModel, Matrix6, TimingConfig, Vector6};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    /// Base loop period = IMU period (s).
    pub imu_period: f64,
    /// GPS fix period (s).
    pub gps_period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessNoiseSection {
    /// Diagonal of the per-step process covariance (12 entries).
    pub sigma_w_diag: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpsSection {
    /// 3x3 position covariance, row-major (9 entries, m^2).
    pub sigma_p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuSection {
    /// Constant measurement bias (6 entries).
    pub bias: Vec<f64>,
    /// 6x6 measurement covariance, row-major (36 entries).
    pub sigma_omega: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    /// Initial error covariance scale (P0 = initial_cov * I).
    pub initial_cov: f64,
    /// Standard deviation of the initial estimate offset from truth.
    pub init_noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionSection {
    /// Initial position; also the hover reference during warm-up.
    pub start: [f64; 3],
    pub waypoints: Vec<[f64; 3]>,
    pub capture_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Ramp,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub kind: AttackKind,
    /// Ramp slope vector C (m/s).
    pub c: [f64; 3],
    /// Constant offset for the bias attack (m).
    pub bias: [f64; 3],
    /// Attack start, seconds from mission start (k = 0).
    pub start_time: f64,
    pub enabled: bool,
}

/// A numeric threshold or the `"calibrate"` directive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSetting {
    Value(f64),
    Directive(String),
}

impl ThresholdSetting {
    pub fn resolved(&self) -> Option<f64> {
        match self {
            ThresholdSetting::Value(v) => Some(*v),
            ThresholdSetting::Directive(_) => None,
        }
    }
}

/// A numeric CUSUM drift or `"dof"` (per-step innovation dimension).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DriftSetting {
    Value(f64),
    Keyword(String),
}

impl DriftSetting {
    pub fn to_spec(&self) -> Result<DriftSpec, SimError> {
        match self {
            DriftSetting::Value(v) => Ok(DriftSpec::Fixed(*v)),
            DriftSetting::Keyword(s) if s == "dof" => Ok(DriftSpec::Dof),
            DriftSetting::Keyword(s) => Err(SimError::Validation(format!(
                "detectors.cusum_drift must be a number or \"dof\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub chi2_threshold: ThresholdSetting,
    pub cusum_threshold: ThresholdSetting,
    pub cusum_drift: DriftSetting,
    pub target_pfa: f64,
    pub reset_on_alarm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Mission horizon after warm-up (s).
    pub horizon: f64,
    /// Warm-up length before step 0 (s); lets the loop settle before the
    /// attack clock starts.
    pub warmup: f64,
    /// Base RNG seed.
    pub seed: u64,
    pub drag_enabled: bool,
    /// Translational drag rate (1/s).
    pub k_drag: f64,
    /// Rotational damping (N m s).
    pub k_tau: f64,
}

/// The full scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub vehicle: VehicleParams,
    pub timing: TimingSection,
    pub process_noise: ProcessNoiseSection,
    pub gps: GpsSection,
    pub imu: ImuSection,
    pub estimator: EstimatorSection,
    pub controller: PidGains,
    pub mission: MissionSection,
    pub attack: AttackSection,
    pub detectors: DetectorSection,
    pub sim: SimSection,
}

impl Default for ScenarioConfig {
    /// The square way-point scenario: four corners and home, 0.05 m/s ramp
    /// on the GPS x channel, detectors calibrated to a 1% per-step rate.
    fn default() -> Self {
        ScenarioConfig {
            vehicle: VehicleParams::default(),
            timing: TimingSection { imu_period: 1e-3, gps_period: 0.2 },
            process_noise: ProcessNoiseSection {
                sigma_w_diag: vec![
                    1e-8, 1e-8, 1e-8, 1e-8, 1e-8, 1e-8, 1e-6, 1e-6, 1e-6, 1e-6, 1e-6, 1e-6,
                ],
            },
            gps: GpsSection {
                sigma_p: vec![0.25, 0.0, 0.0, 0.0, 0.25, 0.0, 0.0, 0.0, 0.25],
            },
            imu: ImuSection {
                bias: vec![0.0; 6],
                sigma_omega: row_major_diag6(&[4e-6, 4e-6, 4e-6, 2.5e-5, 2.5e-5, 2.5e-5]),
            },
            estimator: EstimatorSection { initial_cov: 1e-2, init_noise_std: 1e-2 },
            controller: PidGains::default(),
            mission: MissionSection {
                start: [0.0, 0.0, 10.0],
                waypoints: vec![
                    [100.0, 0.0, 20.0],
                    [100.0, 100.0, 20.0],
                    [0.0, 100.0, 10.0],
                    [0.0, 0.0, 10.0],
                ],
                capture_radius: 2.0,
            },
            attack: AttackSection {
                kind: AttackKind::Ramp,
                c: [0.05, 0.0, 0.0],
                bias: [0.0, 0.0, 0.0],
                start_time: 0.0,
                enabled: true,
            },
            detectors: DetectorSection {
                // Calibrated to a 1% per-step rate on the attack-free
                // default scenario (see `spoofsim calibrate`).
                chi2_threshold: ThresholdSetting::Value(16.97),
                cusum_threshold: ThresholdSetting::Value(39.06),
                cusum_drift: DriftSetting::Keyword("dof".to_string()),
                target_pfa: 0.01,
                reset_on_alarm: true,
            },
            sim: SimSection {
                horizon: 250.0,
                warmup: 10.0,
                seed: 42,
                drag_enabled: true,
                k_drag: 0.02,
                k_tau: 1e-4,
            },
        }
    }
}

impl ScenarioConfig {
    /// Parse and validate a TOML scenario. Parse errors carry the TOML
    /// line/column; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::parse(&text)
    }

    /// Serialize back to TOML. `parse(emit(cfg))` reproduces `cfg` exactly.
    pub fn emit(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serializes")
    }

    /// SHA-256 of the emitted TOML; identifies the config in run records.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.emit().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.vehicle.validate()?;
        let timing = TimingConfig::new(self.timing.imu_period, self.timing.gps_period)?;

        expect_len("process_noise.sigma_w_diag", &self.process_noise.sigma_w_diag, 12)?;
        if self.process_noise.sigma_w_diag.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(SimError::Validation(
                "process_noise.sigma_w_diag entries must be non-negative".to_string(),
            ));
        }
        expect_len("gps.sigma_p", &self.gps.sigma_p, 9)?;
        expect_len("imu.bias", &self.imu.bias, 6)?;
        expect_len("imu.sigma_omega", &self.imu.sigma_omega, 36)?;
        // PSD checks happen in the model constructors.
        self.gps_model()?;
        self.imu_model()?;
        self.process_noise_model()?;

        for (name, v) in [
            ("estimator.initial_cov", self.estimator.initial_cov),
            ("estimator.init_noise_std", self.estimator.init_noise_std),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::Validation(format!("{name} must be non-negative")));
            }
        }

        if self.mission.waypoints.is_empty() {
            return Err(SimError::Validation(
                "mission.waypoints must contain at least one waypoint".to_string(),
            ));
        }
        if !(self.mission.capture_radius > 0.0) {
            return Err(SimError::Validation(
                "mission.capture_radius must be positive".to_string(),
            ));
        }

        if !(self.attack.start_time >= 0.0) {
            return Err(SimError::Validation(
                "attack.start_time must be non-negative".to_string(),
            ));
        }

        if !(self.detectors.target_pfa > 0.0 && self.detectors.target_pfa < 1.0) {
            return Err(SimError::Validation(
                "detectors.target_pfa must lie in (0, 1)".to_string(),
            ));
        }
        for (name, setting) in [
            ("detectors.chi2_threshold", &self.detectors.chi2_threshold),
            ("detectors.cusum_threshold", &self.detectors.cusum_threshold),
        ] {
            if let ThresholdSetting::Directive(d) = setting {
                if d != "calibrate" {
                    return Err(SimError::Validation(format!(
                        "{name} must be a number or \"calibrate\", got \"{d}\""
                    )));
                }
            }
        }
        self.detectors.cusum_drift.to_spec()?;

        for (name, v) in [
            ("sim.horizon", self.sim.horizon),
            ("sim.warmup", self.sim.warmup),
            ("sim.k_drag", self.sim.k_drag),
            ("sim.k_tau", self.sim.k_tau),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::Validation(format!("{name} must be non-negative")));
            }
        }
        if !(self.sim.horizon > 0.0) {
            return Err(SimError::Validation("sim.horizon must be positive".to_string()));
        }
        // Desk-scale guard.
        let total_steps = (self.sim.horizon + self.sim.warmup) / timing.td;
        if total_steps > 1e7 {
            return Err(SimError::Validation(format!(
                "(sim.horizon + sim.warmup) / timing.imu_period = {total_steps:.0} steps \
                 exceeds the 1e7-step guard"
            )));
        }
        Ok(())
    }

    pub fn timing(&self) -> Result<TimingConfig, SimError> {
        TimingConfig::new(self.timing.imu_period, self.timing.gps_period)
    }

    pub fn gps_model(&self) -> Result<GpsNoiseModel, SimError> {
        GpsNoiseModel::new(Matrix3::from_row_slice(&self.gps.sigma_p))
    }

    pub fn imu_model(&self) -> Result<ImuModel, SimError> {
        ImuModel::new(
            Vector6::from_row_slice(&self.imu.bias),
            Matrix6::from_row_slice(&self.imu.sigma_omega),
        )
    }

    pub fn process_noise_model(&self) -> Result<ProcessNoiseModel, SimError> {
        let mut diag = [0.0; 12];
        diag.copy_from_slice(&self.process_noise.sigma_w_diag);
        ProcessNoiseModel::from_diag(&diag)
    }

    pub fn drag(&self) -> Option<DragModel> {
        if self.sim.drag_enabled {
            Some(DragModel { k_drag: self.sim.k_drag, k_tau: self.sim.k_tau })
        } else {
            None
        }
    }

    pub fn mission_start(&self) -> Vector3<f64> {
        Vector3::from_row_slice(&self.mission.start)
    }

    pub fn mission_waypoints(&self) -> Vec<Waypoint> {
        self.mission
            .waypoints
            .iter()
            .map(|w| Waypoint {
                target: Vector3::from_row_slice(w),
                capture_radius: self.mission.capture_radius,
            })
            .collect()
    }

    pub fn attack_config(&self, td: f64) -> AttackConfig {
        let signal = match self.attack.kind {
            AttackKind::Ramp => {
                AttackSignal::Ramp { slope: Vector3::from_row_slice(&self.attack.c) }
            }
            AttackKind::Bias => {
                AttackSignal::Bias { offset: Vector3::from_row_slice(&self.attack.bias) }
            }
        };
        AttackConfig {
            signal,
            start_step: (self.attack.start_time / td).round() as i64,
            enabled: self.attack.enabled,
        }
    }

    /// Detector configuration with resolved thresholds, or a validation
    /// error pointing at the unresolved `"calibrate"` directive.
    pub fn detector_config(&self) -> Result<DetectorConfig, SimError> {
        let chi2 = self.detectors.chi2_threshold.resolved().ok_or_else(|| {
            SimError::Validation(
                "detectors.chi2_threshold is \"calibrate\"; run `spoofsim calibrate` \
                 and set the value"
                    .to_string(),
            )
        })?;
        let cusum = self.detectors.cusum_threshold.resolved().ok_or_else(|| {
            SimError::Validation(
                "detectors.cusum_threshold is \"calibrate\"; run `spoofsim calibrate` \
                 and set the value"
                    .to_string(),
            )
        })?;
        Ok(DetectorConfig {
            chi2_threshold: chi2,
            cusum_threshold: cusum,
            drift: self.detectors.cusum_drift.to_spec()?,
            reset_on_alarm: self.detectors.reset_on_alarm,
        })
    }

    /// Detector configuration for calibration runs: thresholds pushed to
    /// infinity so the statistics are recorded without any alarms firing.
    pub fn detector_config_unarmed(&self) -> Result<DetectorConfig, SimError> {
        Ok(DetectorConfig {
            chi2_threshold: f64::INFINITY,
            cusum_threshold: f64::INFINITY,
            drift: self.detectors.cusum_drift.to_spec()?,
            reset_on_alarm: self.detectors.reset_on_alarm,
        })
    }
}

fn expect_len(name: &str, v: &[f64], want: usize) -> Result<(), SimError> {
    if v.len() != want {
        return Err(SimError::Validation(format!(
            "{name} must have {want} entries, got {}",
            v.len()
        )));
    }
    Ok(())
}

fn row_major_diag6(diag: &[f64; 6]) -> Vec<f64> {
    let mut out = vec![0.0; 36];
    for (i, d) in diag.iter().enumerate() {
        out[i * 6 + i] = *d;
    }
    out
}
