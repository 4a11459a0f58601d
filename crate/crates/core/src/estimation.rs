//! Multirate sensor fusion: an EKF that predicts at the IMU rate, corrects
//! with the IMU every step, and folds in GPS position fixes on GPS ticks.
//!
//! The filter dimension is fixed at 12 (no bias states), all Jacobians are
//! central finite differences (no hand-derived linearization), and the
//! filter model never includes the simulation-only drag disturbance. The
//! estimator is measurement-driven only: nothing here reads plant state.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::dynamics::{
    continuous_derivative, motor_mixing, Matrix12, RotorCommand, StateVector, VehicleParams,
};
use crate::error::SimError;
use crate::sensors::{GpsNoiseModel, ImuModel, SensorFrame, Vector6};

/// Finite-difference step for all Jacobians (central differences).
pub const FD_STEP: f64 = 1e-6;

/// Condition-number ceiling above which the innovation covariance is
/// treated as singular.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Filter state: estimate, error covariance, and the step index of the
/// last fused frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub x_hat: StateVector,
    pub cov: Matrix12,
    pub step: i64,
}

impl EstimatorState {
    pub fn new(x_hat: StateVector, initial_cov: f64, step: i64) -> Self {
        EstimatorState { x_hat, cov: Matrix12::identity() * initial_cov, step }
    }
}

/// Central-difference Jacobian of the (drag-free) plant derivative.
fn plant_jacobian(x: &StateVector, u: &RotorCommand, params: &VehicleParams) -> Matrix12 {
    let ft = motor_mixing(u, params);
    let mut jac = Matrix12::zeros();
    for col in 0..12 {
        let mut plus = *x;
        let mut minus = *x;
        plus.0[col] += FD_STEP;
        minus.0[col] -= FD_STEP;
        let dplus = continuous_derivative(&plus, &ft, params, None);
        let dminus = continuous_derivative(&minus, &ft, params, None);
        jac.set_column(col, &((dplus - dminus) / (2.0 * FD_STEP)));
    }
    jac
}

/// Prediction half: `x_hat- = x_hat + f(x_hat, u) Td`,
/// `P- = A P A^T + Sigma_w` with `A = I + Td df/dx`.
pub fn ekf_predict(
    est: &EstimatorState,
    u_prev: &RotorCommand,
    td: f64,
    params: &VehicleParams,
    sigma_w: &Matrix12,
) -> Result<EstimatorState, SimError> {
    let ft = motor_mixing(u_prev, params);
    let deriv = continuous_derivative(&est.x_hat, &ft, params, None);
    let x_pred = StateVector(est.x_hat.0 + deriv * td);
    if !x_pred.is_finite() {
        return Err(SimError::NonFiniteEstimate { step: est.step + 1 });
    }
    let a = Matrix12::identity() + plant_jacobian(&est.x_hat, u_prev, params) * td;
    let mut cov = a * est.cov * a.transpose() + sigma_w;
    cov = (cov + cov.transpose()) * 0.5;
    Ok(EstimatorState { x_hat: x_pred, cov, step: est.step + 1 })
}

/// Predicted measurement for the stacked map: IMU read-out rows first,
/// position rows appended on GPS ticks.
fn predicted_measurement<const M: usize>(x: &StateVector) -> SVector<f64, M> {
    let mut out = SVector::<f64, M>::zeros();
    let imu = crate::sensors::imu_readout(&x.omega());
    out.fixed_rows_mut::<6>(0).copy_from(&imu);
    if M == 9 {
        out.fixed_rows_mut::<3>(6).copy_from(&x.position());
    }
    out
}

fn update_inner<const M: usize>(
    est: &EstimatorState,
    y: &SVector<f64, M>,
    r: &SMatrix<f64, M, M>,
) -> Result<(EstimatorState, SVector<f64, M>, SMatrix<f64, M, M>), SimError> {
    // Central finite-difference measurement Jacobian.
    let mut h = SMatrix::<f64, M, 12>::zeros();
    for col in 0..12 {
        let mut plus = est.x_hat;
        let mut minus = est.x_hat;
        plus.0[col] += FD_STEP;
        minus.0[col] -= FD_STEP;
        let diff = (predicted_measurement::<M>(&plus) - predicted_measurement::<M>(&minus))
            / (2.0 * FD_STEP);
        h.set_column(col, &diff);
    }

    let innovation = y - predicted_measurement::<M>(&est.x_hat);
    let s = h * est.cov * h.transpose() + r;

    let chol = match s.cholesky() {
        Some(c) => c,
        None => return Err(SimError::SingularInnovation { cond: f64::INFINITY }),
    };
    // Cheap condition estimate from the Cholesky diagonal.
    let diag = chol.l_dirty().diagonal();
    let (mut dmin, mut dmax) = (f64::INFINITY, 0.0f64);
    for i in 0..M {
        dmin = dmin.min(diag[i].abs());
        dmax = dmax.max(diag[i].abs());
    }
    let cond = (dmax / dmin).powi(2);
    if !cond.is_finite() || cond > MAX_INNOVATION_CONDITION {
        return Err(SimError::SingularInnovation { cond });
    }

    // K = P H^T S^-1, via S^-1 (H P) since P is symmetric.
    let hp = h * est.cov;
    let gain = chol.solve(&hp).transpose();

    let x_new = StateVector(est.x_hat.0 + gain * innovation);
    if !x_new.is_finite() {
        return Err(SimError::NonFiniteEstimate { step: est.step });
    }

    // Joseph-form covariance update keeps P symmetric PSD under rounding.
    let ikh = Matrix12::identity() - gain * h;
    let mut cov = ikh * est.cov * ikh.transpose() + gain * r * gain.transpose();
    cov = (cov + cov.transpose()) * 0.5;

    Ok((EstimatorState { x_hat: x_new, cov, step: est.step }, innovation, s))
}

/// Correction half. Returns the updated state together with the innovation
/// and its covariance for the detectors.
pub fn ekf_update(
    est: &EstimatorState,
    frame: &SensorFrame,
    gps_model: &GpsNoiseModel,
    imu_model: &ImuModel,
) -> Result<(EstimatorState, DVector<f64>, DMatrix<f64>), SimError> {
    debug_assert_eq!(frame.k, est.step, "frame step must match estimator step");
    match frame.gps {
        None => {
            let y: Vector6 = frame.imu;
            let r: SMatrix<f64, 6, 6> = *imu_model.sigma();
            let (next, innov, s) = update_inner::<6>(est, &y, &r)?;
            Ok((next, dvector_from(&innov), dmatrix_from(&s)))
        }
        Some(gps) => {
            let mut y = SVector::<f64, 9>::zeros();
            y.fixed_rows_mut::<6>(0).copy_from(&frame.imu);
            y.fixed_rows_mut::<3>(6).copy_from(&gps);
            let mut r = SMatrix::<f64, 9, 9>::zeros();
            r.fixed_view_mut::<6, 6>(0, 0).copy_from(imu_model.sigma());
            r.fixed_view_mut::<3, 3>(6, 6).copy_from(gps_model.sigma());
            let (next, innov, s) = update_inner::<9>(est, &y, &r)?;
            Ok((next, dvector_from(&innov), dmatrix_from(&s)))
        }
    }
}

/// One full fusion step: predict with the previous command, then correct
/// with whatever the frame carries. This is the loop's realization of the
/// fusion map; its Lipschitz constant is estimated empirically.
pub fn fuse_step(
    est: &EstimatorState,
    u_prev: &RotorCommand,
    frame: &SensorFrame,
    td: f64,
    params: &VehicleParams,
    sigma_w: &Matrix12,
    gps_model: &GpsNoiseModel,
    imu_model: &ImuModel,
) -> Result<(EstimatorState, DVector<f64>, DMatrix<f64>), SimError> {
    let predicted = ekf_predict(est, u_prev, td, params, sigma_w)?;
    ekf_update(&predicted, frame, gps_model, imu_model)
}

fn dvector_from<const M: usize>(v: &SVector<f64, M>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn dmatrix_from<const M: usize>(m: &SMatrix<f64, M, M>) -> DMatrix<f64> {
    DMatrix::from_column_slice(M, M, m.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{idx, Vector12};
    use crate::sensors::{sample_imu, TimingConfig};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector3};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn models() -> (GpsNoiseModel, ImuModel) {
        let gps = GpsNoiseModel::new(Matrix3::identity() * 0.25).unwrap();
        let imu = ImuModel::new(
            Vector6::zeros(),
            SMatrix::<f64, 6, 6>::from_diagonal(&Vector6::from_row_slice(&[
                4e-6, 4e-6, 4e-6, 2.5e-5, 2.5e-5, 2.5e-5,
            ])),
        )
        .unwrap();
        (gps, imu)
    }

    fn default_sigma_w() -> Matrix12 {
        Matrix12::from_diagonal(&Vector12::from_row_slice(&[
            1e-8, 1e-8, 1e-8, 1e-8, 1e-8, 1e-8, 1e-6, 1e-6, 1e-6, 1e-6, 1e-6, 1e-6,
        ]))
    }

    /// Hand-derived Jacobian of the drag-free derivative; the test oracle
    /// for the finite-difference path.
    fn analytic_jacobian(x: &StateVector, u: &RotorCommand, p: &VehicleParams) -> Matrix12 {
        let ft = motor_mixing(u, p);
        let s = &x.0;
        let (phi, theta, psi) = (s[idx::PHI], s[idx::THETA], s[idx::PSI]);
        let (pr, qr, rr) = (s[idx::PHI_DOT], s[idx::THETA_DOT], s[idx::PSI_DOT]);
        let (ix, iy, iz) = (p.inertia_x, p.inertia_y, p.inertia_z);
        let fm = ft.force / p.mass;
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let (ss, cs) = psi.sin_cos();

        let mut j = Matrix12::zeros();
        j[(idx::PHI, idx::PHI_DOT)] = 1.0;
        j[(idx::THETA, idx::THETA_DOT)] = 1.0;
        j[(idx::PSI, idx::PSI_DOT)] = 1.0;
        j[(idx::PHI_DOT, idx::THETA_DOT)] = (iy - iz) / ix * rr;
        j[(idx::PHI_DOT, idx::PSI_DOT)] = (iy - iz) / ix * qr;
        j[(idx::THETA_DOT, idx::PHI_DOT)] = (iz - ix) / iy * rr;
        j[(idx::THETA_DOT, idx::PSI_DOT)] = (iz - ix) / iy * pr;
        j[(idx::PSI_DOT, idx::PHI_DOT)] = (ix - iy) / iz * qr;
        j[(idx::PSI_DOT, idx::THETA_DOT)] = (ix - iy) / iz * pr;
        j[(idx::X, idx::VX)] = 1.0;
        j[(idx::Y, idx::VY)] = 1.0;
        j[(idx::Z, idx::VZ)] = 1.0;
        j[(idx::VX, idx::PHI)] = fm * (-sp * st * cs + cp * ss);
        j[(idx::VX, idx::THETA)] = fm * (cp * ct * cs);
        j[(idx::VX, idx::PSI)] = fm * (-cp * st * ss + sp * cs);
        j[(idx::VY, idx::PHI)] = fm * (-sp * st * ss - cp * cs);
        j[(idx::VY, idx::THETA)] = fm * (cp * ct * ss);
        j[(idx::VY, idx::PSI)] = fm * (cp * st * cs + sp * ss);
        j[(idx::VZ, idx::PHI)] = fm * sp * ct;
        j[(idx::VZ, idx::THETA)] = fm * cp * st;
        j
    }

    #[test]
    fn finite_difference_jacobian_matches_symbolic_oracle() {
        let p = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = StateVector::from_parts(
                Vector3::from_fn(|_, _| rng.random_range(-0.8..0.8)),
                Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
                Vector3::from_fn(|_, _| rng.random_range(-50.0..50.0)),
                Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
            );
            let u = RotorCommand([
                rng.random_range(0.0..1e5),
                rng.random_range(0.0..1e5),
                rng.random_range(0.0..1e5),
                rng.random_range(0.0..1e5),
            ]);
            let fd = plant_jacobian(&x, &u, &p);
            let exact = analytic_jacobian(&x, &u, &p);
            let max_err = (fd - exact).abs().max();
            assert!(max_err < 1e-4, "jacobian mismatch {max_err}");
        }
    }

    #[test]
    fn hover_prediction_is_stationary() {
        let p = VehicleParams::default();
        let x = StateVector::at_position(Vector3::new(0.0, 0.0, 10.0));
        let est = EstimatorState::new(x, 1e-2, -1);
        let next = ekf_predict(&est, &RotorCommand::hover(&p), 1e-3, &p, &default_sigma_w()).unwrap();
        assert!((next.x_hat.0 - x.0).norm() < 1e-15);
        assert_eq!(next.step, 0);
    }

    #[test]
    fn prediction_inflates_diagonal_covariance() {
        // With a diagonal PSD P and the hover-point A (zero diagonal
        // Jacobian), the linear trace term vanishes and Sigma_w strictly
        // inflates the trace.
        let p = VehicleParams::default();
        let x = StateVector::at_position(Vector3::new(0.0, 0.0, 10.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let diag = Vector12::from_fn(|_, _| rng.random_range(1e-6..1.0));
            let est = EstimatorState {
                x_hat: x,
                cov: Matrix12::from_diagonal(&diag),
                step: 0,
            };
            let next =
                ekf_predict(&est, &RotorCommand::hover(&p), 1e-3, &p, &default_sigma_w()).unwrap();
            assert!(next.cov.trace() >= est.cov.trace());
        }
    }

    #[test]
    fn consistent_measurement_leaves_state_unchanged() {
        let (gps, imu) = models();
        let truth = StateVector::from_parts(
            Vector3::new(0.05, -0.1, 0.4),
            Vector3::new(0.1, 0.0, -0.2),
            Vector3::new(3.0, -1.0, 12.0),
            Vector3::new(0.4, 0.2, 0.0),
        );
        let est = EstimatorState::new(truth, 1e-2, 0);
        let frame = SensorFrame {
            k: 0,
            imu: sample_imu(&truth.omega(), &Vector6::zeros()),
            gps: Some(truth.position()),
        };
        let (next, innov, _) = ekf_update(&est, &frame, &gps, &imu).unwrap();
        assert!(innov.norm() < 1e-12);
        assert!((next.x_hat.0 - truth.0).norm() < 1e-12);
    }

    #[test]
    fn innovation_dimension_follows_schedule() {
        let (gps, imu) = models();
        let truth = StateVector::at_position(Vector3::new(1.0, 1.0, 1.0));
        let est = EstimatorState::new(truth, 1e-2, 0);
        let with_gps = SensorFrame {
            k: 0,
            imu: Vector6::zeros(),
            gps: Some(Vector3::zeros()),
        };
        let (_, innov, s) = ekf_update(&est, &with_gps, &gps, &imu).unwrap();
        assert_eq!(innov.len(), 9);
        assert_eq!(s.nrows(), 9);

        let imu_only = SensorFrame { k: 0, imu: Vector6::zeros(), gps: None };
        let (_, innov, s) = ekf_update(&est, &imu_only, &gps, &imu).unwrap();
        assert_eq!(innov.len(), 6);
        assert_eq!(s.nrows(), 6);
    }

    #[test]
    fn singular_covariances_are_reported() {
        let gps = GpsNoiseModel::new(Matrix3::zeros()).unwrap();
        let imu = ImuModel::new(Vector6::zeros(), SMatrix::<f64, 6, 6>::zeros()).unwrap();
        let truth = StateVector::zero();
        // Zero measurement noise and zero state uncertainty leave S singular.
        let est = EstimatorState { x_hat: truth, cov: Matrix12::zeros(), step: 0 };
        let frame = SensorFrame { k: 0, imu: Vector6::zeros(), gps: Some(Vector3::zeros()) };
        match ekf_update(&est, &frame, &gps, &imu) {
            Err(SimError::SingularInnovation { .. }) => {}
            other => panic!("expected SingularInnovation, got {other:?}"),
        }
    }

    #[test]
    fn fuse_step_is_deterministic() {
        let (gps, imu) = models();
        let p = VehicleParams::default();
        let truth = StateVector::at_position(Vector3::new(2.0, 0.0, 10.0));
        let est = EstimatorState::new(truth, 1e-2, -1);
        let frame = SensorFrame {
            k: 0,
            imu: Vector6::from_row_slice(&[1e-3, -2e-3, 0.0, 5e-3, 0.0, 1e-3]),
            gps: Some(Vector3::new(2.1, -0.05, 9.9)),
        };
        let u = RotorCommand::hover(&p);
        let run = || {
            fuse_step(&est, &u, &frame, 1e-3, &p, &default_sigma_w(), &gps, &imu).unwrap()
        };
        let (a, ia, sa) = run();
        let (b, ib, sb) = run();
        assert_eq!(a.x_hat.0, b.x_hat.0);
        assert_eq!(a.cov, b.cov);
        assert_eq!(ia, ib);
        assert_eq!(sa, sb);
    }

    #[test]
    fn covariance_stays_psd_over_many_random_steps() {
        // 1e5 fusion steps with random measurements; P + 1e-10 I must stay
        // Cholesky-decomposable throughout.
        let (gps, imu) = models();
        let p = VehicleParams::default();
        let timing = TimingConfig::default();
        let sigma_w = default_sigma_w();
        let truth = StateVector::at_position(Vector3::new(0.0, 0.0, 10.0));
        let mut est = EstimatorState::new(truth, 1e-2, -1);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u = RotorCommand::hover(&p);
        for k in 0..100_000i64 {
            let imu_draw =
                imu.correlate(&Vector6::from_fn(|_, _| StandardNormal.sample(&mut rng)));
            let gps_draw =
                gps.correlate(&Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng)));
            let frame = SensorFrame::sample(k, &truth, &timing, &imu_draw, Some(&gps_draw));
            let (next, _, _) =
                fuse_step(&est, &u, &frame, timing.td, &p, &sigma_w, &gps, &imu).unwrap();
            est = next;
            let jittered = est.cov + Matrix12::identity() * 1e-10;
            assert!(jittered.cholesky().is_some(), "covariance lost PSD at step {k}");
        }
    }

    #[test]
    fn static_truth_position_error_converges() {
        // Filter-convergence check: a motionless vehicle observed for 1e3
        // steps ends with position error below 3 sqrt(max diag sigma_p).
        let (gps, imu) = models();
        let p = VehicleParams::default();
        let timing = TimingConfig::default();
        let sigma_w = default_sigma_w();
        let truth = StateVector::at_position(Vector3::new(4.0, -2.0, 10.0));
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let offset = Vector12::from_fn(|_, _| {
            let s: f64 = StandardNormal.sample(&mut rng);
            0.05 * s
        });
        let mut est = EstimatorState::new(StateVector(truth.0 + offset), 1e-2, -1);
        let u = RotorCommand::hover(&p);
        for k in 0..1000i64 {
            let imu_draw =
                imu.correlate(&Vector6::from_fn(|_, _| StandardNormal.sample(&mut rng)));
            let gps_draw =
                gps.correlate(&Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng)));
            let frame = SensorFrame::sample(k, &truth, &timing, &imu_draw, Some(&gps_draw));
            let (next, _, _) =
                fuse_step(&est, &u, &frame, timing.td, &p, &sigma_w, &gps, &imu).unwrap();
            est = next;
        }
        let pos_err = (est.x_hat.position() - truth.position()).norm();
        let bound = 3.0 * gps.sigma()[(0, 0)].sqrt();
        assert!(pos_err < bound, "position error {pos_err} vs bound {bound}");
    }

    #[test]
    fn jacobian_step_scale_sanity() {
        // FD_STEP must stay far above f64 noise at the state magnitudes the
        // filter sees (positions up to ~1e2).
        assert_relative_eq!(100.0f64 + FD_STEP - 100.0, FD_STEP, max_relative = 1e-6);
    }
}
