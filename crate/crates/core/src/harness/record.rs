//! Full per-step trajectory records enabling exact replay.

use nalgebra::Vector3;

use crate::control::ControllerState;
use crate::detection::Verdict;
use crate::dynamics::{Matrix12, RotorCommand, StateVector, Vector12};
use crate::sensors::Vector6;

/// Everything recorded at one loop step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: i64,
    pub t: f64,
    /// True plant state at the start of the step.
    pub truth: StateVector,
    /// Fused estimate after this step's correction.
    pub estimate: StateVector,
    /// Controller state after this step (digest of the loop internals).
    pub ctrl: ControllerState,
    /// Delivered IMU measurement (never attacked).
    pub imu: Vector6,
    /// Delivered GPS measurement (post-attack), on GPS ticks.
    pub gps: Option<Vector3<f64>>,
    /// Injected attack offset, on attacked GPS ticks.
    pub attack: Option<Vector3<f64>>,
    pub innovation_dof: u8,
    pub chi2_stat: f64,
    pub chi2_alarm: bool,
    pub cusum_stat: f64,
    pub cusum_alarm: bool,
    /// Raw noise draws: process step noise, IMU draw (bias-inclusive),
    /// GPS draw on ticks.
    pub w: Vector12,
    pub n_imu: Vector6,
    pub n_gps: Option<Vector3<f64>>,
}

impl StepRecord {
    pub fn verdict(&self) -> Verdict {
        Verdict {
            k: self.k,
            chi2_stat: self.chi2_stat,
            chi2_alarm: self.chi2_alarm,
            cusum_stat: self.cusum_stat,
            cusum_alarm: self.cusum_alarm,
        }
    }
}

/// Loop state captured on entry to the attack-start step; the anchor for
/// fake-state replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayCheckpoint {
    pub k: i64,
    /// True plant state at k.
    pub truth: StateVector,
    /// Estimator state entering the step (after step k-1).
    pub est_x: StateVector,
    pub est_cov: Matrix12,
    /// Controller state entering the step.
    pub ctrl: ControllerState,
    /// Command applied at step k-1.
    pub u_prev: RotorCommand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub seed: u64,
    pub attack_enabled: bool,
    pub config_digest: String,
    pub warmup_steps: i64,
    pub horizon_steps: i64,
    pub td: f64,
}

/// One simulation run: per-step records (warm-up steps carry negative k)
/// plus the replay checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub steps: Vec<StepRecord>,
    pub checkpoint: Option<ReplayCheckpoint>,
}

impl RunRecord {
    /// Detector verdicts for the post-warm-up segment (k >= 0).
    pub fn verdicts_post_warmup(&self) -> Vec<Verdict> {
        self.steps.iter().filter(|s| s.k >= 0).map(|s| s.verdict()).collect()
    }

    pub fn step_at(&self, k: i64) -> Option<&StepRecord> {
        let first = self.steps.first()?.k;
        let idx = usize::try_from(k - first).ok()?;
        let step = self.steps.get(idx)?;
        debug_assert_eq!(step.k, k);
        Some(step)
    }

    /// Index of step k = 0.
    pub fn mission_start_index(&self) -> Option<usize> {
        self.steps.iter().position(|s| s.k == 0)
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::tiny_record;

    #[test]
    fn step_lookup_by_index() {
        let record = tiny_record(1);
        assert_eq!(record.step_at(-2).unwrap().k, -2);
        assert_eq!(record.step_at(3).unwrap().k, 3);
        assert!(record.step_at(4).is_none());
        assert_eq!(record.mission_start_index(), Some(2));
    }

    #[test]
    fn post_warmup_verdicts_skip_negative_steps() {
        let record = tiny_record(1);
        let verdicts = record.verdicts_post_warmup();
        assert_eq!(verdicts.len(), 4);
        assert_eq!(verdicts[0].k, 0);
    }
}
