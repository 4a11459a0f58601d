//! Sampled Lipschitz-constant estimation.
//!
//! The generic estimator draws random pairs in a box and reports the
//! largest output-gap/input-gap ratio seen; the sample max is a lower
//! bound on the true constant. Map-specific wrappers below probe the
//! sensor read-out, the fusion step (with respect to the delivered
//! measurement) and the controller transition (with respect to the state
//! estimate) at operating points harvested from a short nominal rollout.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::control::{controller_step_at, ControllerState};
use crate::dynamics::{RotorCommand, StateVector};
use crate::error::SimError;
use crate::estimation::{fuse_step, EstimatorState};
use crate::harness::{LoopModels, ScenarioConfig};
use crate::sensors::{imu_readout, SensorFrame, Vector6};

/// Max output-gap/input-gap ratio over `n_pairs` uniform pairs in `box_`.
pub fn estimate_lipschitz(
    f: impl Fn(&[f64]) -> Vec<f64>,
    box_: &[(f64, f64)],
    n_pairs: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = box_.len();
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    let mut best: f64 = 0.0;
    for _ in 0..n_pairs {
        for i in 0..dim {
            let (lo, hi) = box_[i];
            a[i] = lo + (hi - lo) * rng.random::<f64>();
            b[i] = lo + (hi - lo) * rng.random::<f64>();
        }
        let input_gap = l2_gap(&a, &b);
        if input_gap == 0.0 {
            continue;
        }
        let output_gap = l2_gap(&f(&a), &f(&b));
        best = best.max(output_gap / input_gap);
    }
    best
}

fn l2_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Lipschitz constant of the IMU read-out `h` on its operating box,
/// re-estimated with a caller-chosen sample count and seed.
pub fn sensor_lipschitz(n_pairs: usize, seed: u64) -> f64 {
    estimate_lipschitz(
        |omega| {
            let v = Vector6::from_row_slice(omega);
            imu_readout(&v).iter().copied().collect()
        },
        &crate::sensors::ImuModel::OPERATING_BOX,
        n_pairs,
        seed,
    )
}

/// Operating points for the fusion/controller probes: estimator and
/// controller states harvested from a short nominal rollout of `cfg`.
struct OperatingPoints {
    models: LoopModels,
    points: Vec<(EstimatorState, ControllerState, RotorCommand, SensorFrame)>,
}

fn harvest_operating_points(
    cfg: &ScenarioConfig,
    seed: u64,
    n_points: usize,
) -> Result<OperatingPoints, SimError> {
    let models = LoopModels::build_unarmed(cfg)?;
    let horizon = (n_points as f64 * models.timing.t_gps + 1.0).min(cfg.sim.horizon);
    let trace = crate::harness::run_estimator_trace(cfg, seed, horizon)?;
    let points = trace.into_iter().take(n_points).collect::<Vec<_>>();
    if points.is_empty() {
        return Err(SimError::Validation(
            "no GPS-tick operating points harvested for the Lipschitz probe".to_string(),
        ));
    }
    Ok(OperatingPoints { models, points })
}

/// Empirical Lipschitz constant of the fusion step with respect to the
/// delivered measurement (the argument the attack perturbs).
pub fn fusion_lipschitz(
    cfg: &ScenarioConfig,
    seed: u64,
    n_points: usize,
    n_pairs_per_point: usize,
) -> Result<f64, SimError> {
    let op = harvest_operating_points(cfg, seed, n_points)?;
    let m = &op.models;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut best: f64 = 0.0;
    for (est_prev, _, u_prev, frame) in &op.points {
        let base = fuse_step(
            est_prev,
            u_prev,
            frame,
            m.timing.td,
            &m.vehicle,
            m.process_noise.sigma(),
            &m.gps,
            &m.imu,
        )?;
        for _ in 0..n_pairs_per_point {
            let mut perturbed = *frame;
            let scale = 10f64.powf(rng.random_range(-4.0..-1.0));
            let d_imu = Vector6::from_fn(|_, _| {
                let s: f64 = StandardNormal.sample(&mut rng);
                scale * s
            });
            let d_gps = Vector3::from_fn(|_, _| {
                let s: f64 = StandardNormal.sample(&mut rng);
                scale * s
            });
            perturbed.imu += d_imu;
            if let Some(gps) = perturbed.gps.as_mut() {
                *gps += d_gps;
            }
            let out = fuse_step(
                est_prev,
                u_prev,
                &perturbed,
                m.timing.td,
                &m.vehicle,
                m.process_noise.sigma(),
                &m.gps,
                &m.imu,
            )?;
            let input_gap =
                (d_imu.norm_squared() + d_gps.norm_squared()).sqrt();
            let output_gap = (out.0.x_hat.0 - base.0.x_hat.0).norm();
            if input_gap > 0.0 {
                best = best.max(output_gap / input_gap);
            }
        }
    }
    Ok(best)
}

/// Empirical Lipschitz constant of the controller state transition with
/// respect to the state estimate, measured on the continuous part of the
/// controller state with the active target held fixed.
pub fn controller_lipschitz(
    cfg: &ScenarioConfig,
    seed: u64,
    n_points: usize,
    n_pairs_per_point: usize,
) -> Result<f64, SimError> {
    let op = harvest_operating_points(cfg, seed, n_points)?;
    let m = &op.models;
    let target = m.mission_start;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x517cc1b727220a95);
    let mut best: f64 = 0.0;
    for (est_prev, ctrl, _, _) in &op.points {
        let x_hat = est_prev.x_hat;
        let (base_state, _) =
            controller_step_at(ctrl, &x_hat, &target, &m.gains, &m.vehicle, m.timing.td);
        for _ in 0..n_pairs_per_point {
            let scale = 10f64.powf(rng.random_range(-4.0..-1.0));
            let delta = crate::dynamics::Vector12::from_fn(|_, _| {
                let s: f64 = StandardNormal.sample(&mut rng);
                scale * s
            });
            let perturbed = StateVector(x_hat.0 + delta);
            let (state, _) =
                controller_step_at(ctrl, &perturbed, &target, &m.gains, &m.vehicle, m.timing.td);
            let output_gap = controller_gap(&state, &base_state);
            best = best.max(output_gap / delta.norm());
        }
    }
    Ok(best)
}

/// Euclidean gap over the continuous part of two controller states.
pub(crate) fn controller_gap(a: &ControllerState, b: &ControllerState) -> f64 {
    ((a.pos_integral - b.pos_integral).norm_squared()
        + (a.att_integral - b.att_integral).norm_squared()
        + (a.prev_pos_meas - b.prev_pos_meas).norm_squared()
        + (a.prev_att_meas - b.prev_att_meas).norm_squared())
    .sqrt()
}
