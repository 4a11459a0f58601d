//! Fake-state replay oracle.
//!
//! For the ramp attack the delivered GPS stream of the attacked run equals
//! the clean GPS stream of a virtual "fake" vehicle whose position rides
//! `C t` behind the attacked one and whose velocity is shifted by `C`.
//! With velocity-independent translational dynamics (drag off) that fake
//! vehicle satisfies the *nominal* closed-loop equations exactly, driven
//! by the very same noise. Re-simulating it and comparing against the
//! recorded attacked run checks the whole construction end to end; any
//! discrepancy beyond float accumulation means the identity is broken
//! (for instance because drag was enabled).

use nalgebra::Vector3;

use crate::attack::AttackSignal;
use crate::control::ControllerState;
use crate::detection::DetectorState;
use crate::error::SimError;
use crate::estimation::EstimatorState;
use crate::harness::{
    simulate_collect, InitialConditions, LoopModels, RecordedNoise, RunRecord, ScenarioConfig,
};

/// Max absolute discrepancy allowed before the identity counts as broken.
pub const REPLAY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct FakeReplayReport {
    pub max_error: f64,
    pub steps_checked: usize,
}

/// Re-simulate the fake vehicle from the recorded attack-start checkpoint
/// and return the worst per-entry discrepancy against the recorded run.
///
/// The record must carry full noise draws and its attack-start checkpoint.
pub fn fake_replay(record: &RunRecord, cfg: &ScenarioConfig) -> Result<FakeReplayReport, SimError> {
    let digest = cfg.digest();
    if record.meta.config_digest != digest {
        return Err(SimError::MismatchedRuns(
            "record was produced by a different config".to_string(),
        ));
    }
    let checkpoint = record.checkpoint.as_ref().ok_or_else(|| {
        SimError::RecordFormat("record has no attack-start checkpoint".to_string())
    })?;

    let models = LoopModels::build(cfg)?;
    let td = models.timing.td;
    let slope = match (record.meta.attack_enabled, models.attack.signal) {
        (true, AttackSignal::Ramp { slope }) => slope,
        (true, AttackSignal::Bias { .. }) => {
            return Err(SimError::Validation(
                "fake-state replay applies to the ramp attack only".to_string(),
            ))
        }
        (false, _) => Vector3::zeros(),
    };

    // Fake initial plant state at the attack start k0: angles and rates
    // carry over, position shifts by the first injected offset -C t_{k0+1}
    // (re-based clock: t = Td), velocity shifts by -C.
    let k0 = checkpoint.k;
    let mut fake_truth = checkpoint.truth;
    fake_truth.set_position(checkpoint.truth.position() - slope * td);
    fake_truth.set_velocity(checkpoint.truth.velocity() - slope);

    let init = InitialConditions {
        k_start: k0,
        truth: fake_truth,
        est: EstimatorState {
            x_hat: checkpoint.est_x,
            cov: checkpoint.est_cov,
            step: k0 - 1,
        },
        ctrl: checkpoint.ctrl,
        u_prev: checkpoint.u_prev,
        det: DetectorState::default(),
    };

    let mut noise = RecordedNoise::new(record, k0)?;
    let end_step = record.meta.horizon_steps;
    let replayed = simulate_collect(&models, init, end_step, None, &mut noise)?;

    let offset = record
        .steps
        .iter()
        .position(|s| s.k == k0)
        .ok_or_else(|| SimError::RecordFormat("attack start step missing".to_string()))?;

    let mut max_error: f64 = 0.0;
    let mut checked = 0usize;
    for (i, fake) in replayed.iter().enumerate() {
        let rec = &record.steps[offset + i];
        debug_assert_eq!(rec.k, fake.k);
        let t_next = (fake.k + 1 - k0) as f64 * td;

        // Angles and rates match outright.
        max_error = max_error.max((fake.truth.omega() - rec.truth.omega()).abs().max());
        // Position rides C t behind; velocity is shifted by C.
        let expect_p = rec.truth.position() - slope * t_next;
        max_error = max_error.max((fake.truth.position() - expect_p).abs().max());
        let expect_v = rec.truth.velocity() - slope;
        max_error = max_error.max((fake.truth.velocity() - expect_v).abs().max());
        // Estimator and controller trajectories are shared verbatim.
        max_error = max_error.max((fake.estimate.0 - rec.estimate.0).abs().max());
        max_error = max_error.max(controller_mismatch(&fake.ctrl, &rec.ctrl));
        checked += 1;
    }

    if max_error > REPLAY_TOLERANCE {
        return Err(SimError::ReplayMismatch { max_err: max_error, tol: REPLAY_TOLERANCE });
    }
    Ok(FakeReplayReport { max_error, steps_checked: checked })
}

fn controller_mismatch(a: &ControllerState, b: &ControllerState) -> f64 {
    let mut err = super::lipschitz::controller_gap(a, b);
    if a.waypoint_idx != b.waypoint_idx {
        err = err.max((a.waypoint_idx as f64 - b.waypoint_idx as f64).abs());
    }
    if a.primed != b.primed {
        err = err.max(1.0);
    }
    err
}

/// Convenience for tests and the negative control: the raw max error even
/// when it exceeds the tolerance.
pub fn fake_replay_error(record: &RunRecord, cfg: &ScenarioConfig) -> Result<f64, SimError> {
    match fake_replay(record, cfg) {
        Ok(report) => Ok(report.max_error),
        Err(SimError::ReplayMismatch { max_err, .. }) => Ok(max_err),
        Err(other) => Err(other),
    }
}

// Coverage for the replay identity itself lives in the crate's tests/
// directory; it needs full scenario runs.
