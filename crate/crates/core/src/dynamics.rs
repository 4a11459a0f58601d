//! Quadcopter rigid-body model: Newton-Euler continuous dynamics, rotor
//! mixing, and noisy fixed-step Euler integration.
//!
//! State layout (12 entries, fixed order everywhere in the crate):
//! `[phi, theta, psi, phi_dot, theta_dot, psi_dot, x, y, z, vx, vy, vz]`.
//!
//! Sign convention: the vertical equation is `z_dd = g - (F/m) cos(phi) cos(theta)`,
//! i.e. gravity pulls toward increasing `z`. Waypoint "altitudes" are plain
//! `z` coordinates in this frame; everything downstream is consistent with it.

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::SimError;

pub type Vector12 = SVector<f64, 12>;
pub type Matrix12 = SMatrix<f64, 12, 12>;

/// Indices into the 12-entry state layout.
pub mod idx {
    pub const PHI: usize = 0;
    pub const THETA: usize = 1;
    pub const PSI: usize = 2;
    pub const PHI_DOT: usize = 3;
    pub const THETA_DOT: usize = 4;
    pub const PSI_DOT: usize = 5;
    pub const X: usize = 6;
    pub const Y: usize = 7;
    pub const Z: usize = 8;
    pub const VX: usize = 9;
    pub const VY: usize = 10;
    pub const VZ: usize = 11;
}

/// Full 12-dimensional physical state of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVector(pub Vector12);

impl StateVector {
    pub fn zero() -> Self {
        StateVector(Vector12::zeros())
    }

    /// Build from attitude angles, angle rates, position and velocity.
    pub fn from_parts(
        angles: Vector3<f64>,
        rates: Vector3<f64>,
        position: Vector3<f64>,
        velocity: Vector3<f64>,
    ) -> Self {
        let mut v = Vector12::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&angles);
        v.fixed_rows_mut::<3>(3).copy_from(&rates);
        v.fixed_rows_mut::<3>(6).copy_from(&position);
        v.fixed_rows_mut::<3>(9).copy_from(&velocity);
        StateVector(v)
    }

    /// At-rest state at a given position.
    pub fn at_position(position: Vector3<f64>) -> Self {
        Self::from_parts(Vector3::zeros(), Vector3::zeros(), position, Vector3::zeros())
    }

    pub fn angles(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into()
    }

    pub fn rates(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into()
    }

    /// Stacked angles-and-rates 6-vector (the quantity the IMU observes).
    pub fn omega(&self) -> SVector<f64, 6> {
        self.0.fixed_rows::<6>(0).into()
    }

    pub fn position(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(6).into()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(9).into()
    }

    pub fn set_position(&mut self, p: Vector3<f64>) {
        self.0.fixed_rows_mut::<3>(6).copy_from(&p);
    }

    pub fn set_velocity(&mut self, v: Vector3<f64>) {
        self.0.fixed_rows_mut::<3>(9).copy_from(&v);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Physical constants of the vehicle. All strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// Mass (kg).
    pub mass: f64,
    /// Gravitational acceleration (m/s^2).
    pub gravity: f64,
    /// Inertia about the body axes (kg m^2).
    pub inertia_x: f64,
    pub inertia_y: f64,
    pub inertia_z: f64,
    /// Distance from each motor to the center of gravity (m).
    pub arm_length: f64,
    /// Thrust coefficient (N s^2).
    pub thrust_coeff: f64,
    /// Rotor drag coefficient (N m s^2).
    pub drag_coeff: f64,
    /// Saturation bound on squared rotor speeds ((rad/s)^2).
    pub rotor_max_sq: f64,
}

impl Default for VehicleParams {
    /// Representative small-quadcopter values; everything is overridable
    /// through the scenario config.
    fn default() -> Self {
        VehicleParams {
            mass: 0.65,
            gravity: 9.81,
            inertia_x: 7.5e-3,
            inertia_y: 7.5e-3,
            inertia_z: 1.3e-2,
            arm_length: 0.23,
            thrust_coeff: 3.13e-5,
            drag_coeff: 7.5e-7,
            rotor_max_sq: 1.0e6,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [
            ("vehicle.mass", self.mass),
            ("vehicle.gravity", self.gravity),
            ("vehicle.inertia_x", self.inertia_x),
            ("vehicle.inertia_y", self.inertia_y),
            ("vehicle.inertia_z", self.inertia_z),
            ("vehicle.arm_length", self.arm_length),
            ("vehicle.thrust_coeff", self.thrust_coeff),
            ("vehicle.drag_coeff", self.drag_coeff),
            ("vehicle.rotor_max_sq", self.rotor_max_sq),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(SimError::Validation(format!(
                    "{name} must be strictly positive (got {value})"
                )));
            }
        }
        Ok(())
    }

    /// Squared rotor speed at which four identical rotors exactly carry
    /// the vehicle weight.
    pub fn hover_rotor_sq(&self) -> f64 {
        self.mass * self.gravity / (4.0 * self.thrust_coeff)
    }
}

/// Squared rotor angular velocities, the plant's control input.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotorCommand(pub [f64; 4]);

impl RotorCommand {
    pub fn hover(params: &VehicleParams) -> Self {
        RotorCommand([params.hover_rotor_sq(); 4])
    }

    /// Clamp every channel into `[0, rotor_max_sq]`. Saturation is part of
    /// the plant and is applied after the controller.
    pub fn saturated(&self, rotor_max_sq: f64) -> Self {
        RotorCommand(self.0.map(|w| w.clamp(0.0, rotor_max_sq)))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Collective thrust plus body torques produced by the rotors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThrustTorque {
    pub force: f64,
    pub tau_x: f64,
    pub tau_y: f64,
    pub tau_z: f64,
}

/// Aerodynamic disturbance applied in simulation only: linear drag on the
/// translational velocity plus rotational damping on the angle rates.
///
/// The estimator never models this; it is the "model uncertainty" the
/// process noise has to cover. Velocity drag also breaks the exact
/// fake-state identity, which is why replay-grade runs disable it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DragModel {
    /// Translational drag rate (1/s): acceleration -= k_drag * v.
    pub k_drag: f64,
    /// Rotational damping (N m s): torque -= k_tau * angle_rate.
    pub k_tau: f64,
}

/// Rotor mixing: `[F, tau_x, tau_y, tau_z] = M * [w1^2, w2^2, w3^2, w4^2]`.
pub fn motor_mixing(u: &RotorCommand, params: &VehicleParams) -> ThrustTorque {
    let [w1, w2, w3, w4] = u.0;
    let b = params.thrust_coeff;
    let d = params.drag_coeff;
    let l = params.arm_length;
    ThrustTorque {
        force: b * (w1 + w2 + w3 + w4),
        tau_x: b * l * (w4 - w2),
        tau_y: b * l * (w1 - w3),
        tau_z: d * (-w1 + w2 - w3 + w4),
    }
}

/// Inverse of [`motor_mixing`]: the exact rotor commands realizing a
/// thrust/torque demand. May return negative channels for infeasible
/// demands; callers clamp.
pub fn mixing_inverse(demand: &ThrustTorque, params: &VehicleParams) -> RotorCommand {
    let b = params.thrust_coeff;
    let d = params.drag_coeff;
    let l = params.arm_length;
    let f4 = demand.force / (4.0 * b);
    let tx = demand.tau_x / (2.0 * b * l);
    let ty = demand.tau_y / (2.0 * b * l);
    let tz = demand.tau_z / (4.0 * d);
    RotorCommand([f4 + ty - tz, f4 - tx + tz, f4 - ty - tz, f4 + tx + tz])
}

/// Right-hand side of the Newton-Euler equations.
///
/// With `drag` disabled the translational-acceleration rows depend only on
/// the attitude block and the thrust, never on position or velocity; the
/// fake-state replay identity relies on this.
pub fn continuous_derivative(
    x: &StateVector,
    ft: &ThrustTorque,
    params: &VehicleParams,
    drag: Option<&DragModel>,
) -> Vector12 {
    let s = &x.0;
    let (phi, theta, psi) = (s[idx::PHI], s[idx::THETA], s[idx::PSI]);
    let (p, q, r) = (s[idx::PHI_DOT], s[idx::THETA_DOT], s[idx::PSI_DOT]);

    let (ix, iy, iz) = (params.inertia_x, params.inertia_y, params.inertia_z);
    let (mut tau_x, mut tau_y, mut tau_z) = (ft.tau_x, ft.tau_y, ft.tau_z);
    if let Some(dg) = drag {
        tau_x -= dg.k_tau * p;
        tau_y -= dg.k_tau * q;
        tau_z -= dg.k_tau * r;
    }

    let (sin_phi, cos_phi) = phi.sin_cos();
    let (sin_theta, cos_theta) = theta.sin_cos();
    let (sin_psi, cos_psi) = psi.sin_cos();

    let f_over_m = ft.force / params.mass;
    let mut acc = Vector3::new(
        f_over_m * (cos_phi * sin_theta * cos_psi + sin_phi * sin_psi),
        f_over_m * (cos_phi * sin_theta * sin_psi - sin_phi * cos_psi),
        params.gravity - f_over_m * cos_phi * cos_theta,
    );
    if let Some(dg) = drag {
        acc -= dg.k_drag * x.velocity();
    }

    let mut d = Vector12::zeros();
    d[idx::PHI] = p;
    d[idx::THETA] = q;
    d[idx::PSI] = r;
    d[idx::PHI_DOT] = (iy - iz) / ix * q * r + tau_x / ix;
    d[idx::THETA_DOT] = (iz - ix) / iy * p * r + tau_y / iy;
    d[idx::PSI_DOT] = (ix - iy) / iz * q * p + tau_z / iz;
    d[idx::X] = s[idx::VX];
    d[idx::Y] = s[idx::VY];
    d[idx::Z] = s[idx::VZ];
    d[idx::VX] = acc.x;
    d[idx::VY] = acc.y;
    d[idx::VZ] = acc.z;
    d
}

/// One Euler step with additive process noise:
/// `x' = x + f(x, u) Td + w`. Deterministic given the noise draw.
pub fn step_discrete(
    x: &StateVector,
    u: &RotorCommand,
    td: f64,
    noise: &Vector12,
    params: &VehicleParams,
    drag: Option<&DragModel>,
    step: i64,
) -> Result<StateVector, SimError> {
    let ft = motor_mixing(u, params);
    let d = continuous_derivative(x, &ft, params, drag);
    let next = StateVector(x.0 + d * td + noise);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(SimError::NonFiniteState { step })
    }
}

/// Process-noise model: a 12x12 PSD covariance with its Cholesky factor
/// cached for sampling.
#[derive(Debug, Clone)]
pub struct ProcessNoiseModel {
    sigma: Matrix12,
    chol: Matrix12,
}

impl ProcessNoiseModel {
    /// Validates symmetry and (with an `1e-12 I` jitter) positive
    /// semi-definiteness via Cholesky.
    pub fn new(sigma: Matrix12) -> Result<Self, SimError> {
        let asym = (sigma - sigma.transpose()).abs().max();
        if !asym.is_finite() || asym > 1e-9 {
            return Err(SimError::Validation(format!(
                "process_noise.sigma_w must be symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let jittered = sigma + Matrix12::identity() * 1e-12;
        let chol = jittered
            .cholesky()
            .ok_or_else(|| {
                SimError::Validation(
                    "process_noise.sigma_w is not positive semi-definite".to_string(),
                )
            })?
            .l();
        Ok(ProcessNoiseModel { sigma, chol })
    }

    pub fn from_diag(diag: &[f64; 12]) -> Result<Self, SimError> {
        Self::new(Matrix12::from_diagonal(&Vector12::from_row_slice(diag)))
    }

    pub fn sigma(&self) -> &Matrix12 {
        &self.sigma
    }

    /// Map a standard-normal draw to a draw from `N(0, sigma_w)`.
    pub fn correlate(&self, standard: &Vector12) -> Vector12 {
        self.chol * standard
    }
}
