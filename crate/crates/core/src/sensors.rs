//! Multirate GPS/IMU measurement generation.
//!
//! The IMU produces a measurement every step; GPS fixes arrive only on
//! steps that are multiples of `N_g = T_gps / T_imu`. Noise draws are
//! sampled upstream (the harness owns the RNG streams), so everything in
//! this module is a pure function of explicit inputs.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::dynamics::StateVector;
use crate::error::SimError;

pub type Vector6 = SVector<f64, 6>;
pub type Matrix6 = SMatrix<f64, 6, 6>;

/// Loop timing: the controller, estimator and IMU share one period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingConfig {
    /// Base step period, equal to the IMU period (s).
    pub td: f64,
    /// GPS fix period (s); must be an integer multiple of `td`.
    pub t_gps: f64,
    /// Steps per GPS fix.
    pub n_g: i64,
}

impl TimingConfig {
    pub fn new(td: f64, t_gps: f64) -> Result<Self, SimError> {
        if !(td > 0.0) || !td.is_finite() {
            return Err(SimError::Validation(format!(
                "timing.imu_period must be positive (got {td})"
            )));
        }
        let ratio = t_gps / td;
        let n_g = ratio.round();
        if !(ratio >= 1.0) || (ratio - n_g).abs() > 1e-9 {
            return Err(SimError::Validation(format!(
                "timing.gps_period must be an integer multiple (>= 1) of timing.imu_period; \
                 got ratio {ratio}"
            )));
        }
        Ok(TimingConfig { td, t_gps, n_g: n_g as i64 })
    }
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig { td: 1e-3, t_gps: 0.2, n_g: 200 }
    }
}

/// What the schedule delivers at a given step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleSlot {
    ImuOnly,
    ImuAndGps,
}

/// GPS fixes land exactly on steps congruent to 0 mod `N_g`; the rule also
/// covers negative (pre-attack / warm-up) steps.
pub fn sensor_schedule(k: i64, timing: &TimingConfig) -> ScheduleSlot {
    if k.rem_euclid(timing.n_g) == 0 {
        ScheduleSlot::ImuAndGps
    } else {
        ScheduleSlot::ImuOnly
    }
}

/// Additive GPS position noise.
#[derive(Debug, Clone)]
pub struct GpsNoiseModel {
    sigma_p: Matrix3<f64>,
    chol: Matrix3<f64>,
}

impl GpsNoiseModel {
    pub fn new(sigma_p: Matrix3<f64>) -> Result<Self, SimError> {
        let chol = psd_cholesky(&sigma_p, "gps.sigma_p")?;
        Ok(GpsNoiseModel { sigma_p, chol })
    }

    pub fn sigma(&self) -> &Matrix3<f64> {
        &self.sigma_p
    }

    pub fn correlate(&self, standard: &Vector3<f64>) -> Vector3<f64> {
        self.chol * standard
    }
}

/// IMU model: a fixed nonlinear read-out of the attitude block plus biased
/// Gaussian noise.
///
/// The read-out is `h(omega) = [angles; W(angles) * rates]` where `W` is the
/// standard kinematic map from Euler-angle rates to body angular rates. It
/// satisfies `h(0) = 0` and is Lipschitz on the bounded operating box; the
/// constant is estimated by sampled maximization at construction and recorded
/// alongside the model.
#[derive(Debug, Clone)]
pub struct ImuModel {
    pub bias: Vector6,
    sigma_omega: Matrix6,
    chol: Matrix6,
    /// Sampled Lipschitz constant of `h` on [`ImuModel::OPERATING_BOX`].
    pub lipschitz: f64,
}

impl ImuModel {
    /// Operating box for the Lipschitz estimate: |roll|, |pitch| <= pi/3,
    /// |yaw| <= pi, |rates| <= 2 pi.
    pub const OPERATING_BOX: [(f64, f64); 6] = [
        (-std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_3),
        (-std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_3),
        (-std::f64::consts::PI, std::f64::consts::PI),
        (-std::f64::consts::TAU, std::f64::consts::TAU),
        (-std::f64::consts::TAU, std::f64::consts::TAU),
        (-std::f64::consts::TAU, std::f64::consts::TAU),
    ];

    pub fn new(bias: Vector6, sigma_omega: Matrix6) -> Result<Self, SimError> {
        if !bias.iter().all(|b| b.is_finite()) {
            return Err(SimError::Validation("imu.bias must be finite".to_string()));
        }
        let chol = psd_cholesky(&sigma_omega, "imu.sigma_omega")?;
        let lipschitz = crate::analysis::estimate_lipschitz(
            |a| imu_readout_slice(a),
            &Self::OPERATING_BOX,
            20_000,
            0x1_0a_5e_ed,
        );
        Ok(ImuModel { bias, sigma_omega, chol, lipschitz })
    }

    pub fn sigma(&self) -> &Matrix6 {
        &self.sigma_omega
    }

    /// Map a standard-normal draw to a draw from `N(bias, sigma_omega)`.
    pub fn correlate(&self, standard: &Vector6) -> Vector6 {
        self.bias + self.chol * standard
    }
}

/// Kinematic matrix mapping Euler-angle rates to body angular rates.
pub fn euler_rate_matrix(angles: &Vector3<f64>) -> Matrix3<f64> {
    let (sin_phi, cos_phi) = angles.x.sin_cos();
    let (sin_theta, cos_theta) = angles.y.sin_cos();
    Matrix3::new(
        1.0, 0.0, -sin_theta, //
        0.0, cos_phi, sin_phi * cos_theta, //
        0.0, -sin_phi, cos_phi * cos_theta,
    )
}

/// The IMU read-out map `h`.
pub fn imu_readout(omega: &Vector6) -> Vector6 {
    let angles: Vector3<f64> = omega.fixed_rows::<3>(0).into();
    let rates: Vector3<f64> = omega.fixed_rows::<3>(3).into();
    let body_rates = euler_rate_matrix(&angles) * rates;
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&angles);
    out.fixed_rows_mut::<3>(3).copy_from(&body_rates);
    out
}

fn imu_readout_slice(omega: &[f64]) -> Vec<f64> {
    let v = Vector6::from_row_slice(omega);
    imu_readout(&v).iter().copied().collect()
}

/// GPS measurement: true position plus the provided noise draw.
pub fn sample_gps(position: &Vector3<f64>, draw: &Vector3<f64>) -> Vector3<f64> {
    position + draw
}

/// IMU measurement: `h(omega)` plus the provided (bias-inclusive) draw.
pub fn sample_imu(omega: &Vector6, draw: &Vector6) -> Vector6 {
    imu_readout(omega) + draw
}

/// All measurements delivered at one step. `gps` is present exactly on
/// schedule ticks; after the attack layer it may be falsified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame {
    pub k: i64,
    pub imu: Vector6,
    pub gps: Option<Vector3<f64>>,
}

impl SensorFrame {
    /// Generate the clean (pre-attack) frame for a plant state.
    pub fn sample(
        k: i64,
        truth: &StateVector,
        timing: &TimingConfig,
        imu_draw: &Vector6,
        gps_draw: Option<&Vector3<f64>>,
    ) -> SensorFrame {
        let gps = match sensor_schedule(k, timing) {
            ScheduleSlot::ImuAndGps => {
                let draw = gps_draw.expect("gps draw required on a gps tick");
                Some(sample_gps(&truth.position(), draw))
            }
            ScheduleSlot::ImuOnly => None,
        };
        SensorFrame { k, imu: sample_imu(&truth.omega(), imu_draw), gps }
    }
}

fn psd_cholesky<const N: usize>(
    m: &SMatrix<f64, N, N>,
    name: &str,
) -> Result<SMatrix<f64, N, N>, SimError> {
    let asym = (m - m.transpose()).abs().max();
    if !asym.is_finite() || asym > 1e-9 {
        return Err(SimError::Validation(format!(
            "{name} must be symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let jittered = m + SMatrix::<f64, N, N>::identity() * 1e-15;
    Ok(jittered
        .cholesky()
        .ok_or_else(|| SimError::Validation(format!("{name} is not positive semi-definite")))?
        .l())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn default_imu() -> ImuModel {
        let sigma = Matrix6::from_diagonal(&Vector6::from_row_slice(&[
            4e-6, 4e-6, 4e-6, 2.5e-5, 2.5e-5, 2.5e-5,
        ]));
        ImuModel::new(Vector6::zeros(), sigma).unwrap()
    }

    #[test]
    fn schedule_matches_modulo_rule() {
        let timing = TimingConfig::default();
        assert_eq!(sensor_schedule(0, &timing), ScheduleSlot::ImuAndGps);
        assert_eq!(sensor_schedule(1, &timing), ScheduleSlot::ImuOnly);
        assert_eq!(sensor_schedule(199, &timing), ScheduleSlot::ImuOnly);
        assert_eq!(sensor_schedule(400, &timing), ScheduleSlot::ImuAndGps);
        // Warm-up steps follow the same rule.
        assert_eq!(sensor_schedule(-200, &timing), ScheduleSlot::ImuAndGps);
        assert_eq!(sensor_schedule(-1, &timing), ScheduleSlot::ImuOnly);
    }

    #[test]
    fn timing_requires_integral_ratio() {
        assert!(TimingConfig::new(1e-3, 0.2).is_ok());
        assert!(TimingConfig::new(1e-3, 0.2005).is_err());
        assert!(TimingConfig::new(1e-3, 0.0005).is_err());
        assert!(TimingConfig::new(0.0, 0.2).is_err());
    }

    #[test]
    fn gps_is_additive() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(sample_gps(&p, &Vector3::zeros()), p);
        assert_eq!(
            sample_gps(&p, &Vector3::new(0.1, -0.1, 0.0)),
            Vector3::new(1.1, 1.9, 3.0)
        );
    }

    #[test]
    fn imu_readout_vanishes_at_origin() {
        assert_eq!(imu_readout(&Vector6::zeros()), Vector6::zeros());
        assert_eq!(sample_imu(&Vector6::zeros(), &Vector6::zeros()), Vector6::zeros());
    }

    #[test]
    fn imu_readout_applies_kinematic_matrix() {
        // At zero attitude W = I, so the read-out passes rates through.
        let mut omega = Vector6::zeros();
        omega[3] = 0.3;
        omega[4] = -0.2;
        omega[5] = 0.1;
        assert_relative_eq!((imu_readout(&omega) - omega).norm(), 0.0);

        // Pitched: body roll rate couples with yaw rate through -sin(theta).
        let mut tilted = Vector6::zeros();
        tilted[1] = 0.5;
        tilted[5] = 1.0;
        let out = imu_readout(&tilted);
        assert_relative_eq!(out[3], -(0.5f64).sin(), epsilon = 1e-15);
    }

    #[test]
    fn sampled_pairs_respect_recorded_lipschitz_constant() {
        let model = default_imu();
        assert!(model.lipschitz > 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let box_ = ImuModel::OPERATING_BOX;
        for _ in 0..10_000 {
            let draw = |rng: &mut ChaCha8Rng| {
                Vector6::from_fn(|i, _| {
                    let (lo, hi) = box_[i];
                    lo + (hi - lo) * rand::Rng::random::<f64>(rng)
                })
            };
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            let lhs = (imu_readout(&a) - imu_readout(&b)).norm();
            assert!(
                lhs <= model.lipschitz * (a - b).norm() * (1.0 + 1e-9),
                "lipschitz bound violated"
            );
        }
    }

    #[test]
    fn gps_monte_carlo_covariance_matches_model() {
        // Monte-Carlo oracle: empirical covariance of 1e5 samples within 5%
        // Frobenius of sigma_p.
        let sigma = Matrix3::new(0.25, 0.02, 0.0, 0.02, 0.16, 0.01, 0.0, 0.01, 0.09);
        let model = GpsNoiseModel::new(sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let mut sum = Vector3::zeros();
        let mut outer = Matrix3::zeros();
        for _ in 0..n {
            let std = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let d = model.correlate(&std);
            sum += d;
            outer += d * d.transpose();
        }
        let mean = sum / n as f64;
        let cov = outer / n as f64 - mean * mean.transpose();
        let err = (cov - sigma).norm() / sigma.norm();
        assert!(err < 0.05, "relative Frobenius error {err}");
    }

    #[test]
    fn imu_bias_shifts_sample_mean() {
        // Sample mean over 1e5 draws equals h(omega) + bias within 3 sigma.
        let bias = Vector6::from_row_slice(&[0.01, 0.01, 0.01, 0.01, 0.01, 0.01]);
        let sigma = Matrix6::from_diagonal(&Vector6::from_row_slice(&[
            4e-6, 4e-6, 4e-6, 2.5e-5, 2.5e-5, 2.5e-5,
        ]));
        let model = ImuModel::new(bias, sigma).unwrap();
        let omega = Vector6::from_row_slice(&[0.1, -0.05, 0.4, 0.2, 0.0, -0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000usize;
        let mut sum = Vector6::zeros();
        for _ in 0..n {
            let std = Vector6::from_fn(|_, _| StandardNormal.sample(&mut rng));
            sum += sample_imu(&omega, &model.correlate(&std));
        }
        let mean = sum / n as f64;
        let expected = imu_readout(&omega) + bias;
        for i in 0..6 {
            let se = (model.sigma()[(i, i)] / n as f64).sqrt();
            assert!(
                (mean[i] - expected[i]).abs() < 3.0 * se,
                "component {i}: mean {} expected {} (3se {})",
                mean[i],
                expected[i],
                3.0 * se
            );
        }
    }

    #[test]
    fn frame_carries_gps_only_on_ticks() {
        let timing = TimingConfig::default();
        let truth = StateVector::at_position(Vector3::new(1.0, 2.0, 3.0));
        let imu_draw = Vector6::zeros();
        let f0 = SensorFrame::sample(0, &truth, &timing, &imu_draw, Some(&Vector3::zeros()));
        assert_eq!(f0.gps, Some(Vector3::new(1.0, 2.0, 3.0)));
        let f1 = SensorFrame::sample(1, &truth, &timing, &imu_draw, None);
        assert_eq!(f1.gps, None);
    }
}
