//! Cascade PID flight controller.
//!
//! The position loop turns the waypoint error into a desired acceleration
//! and inverts the translational model (small-angle, current yaw held) into
//! attitude set-points plus a collective-thrust reference. The attitude
//! loop turns set-point errors into torque demands and maps them through
//! the inverse rotor mixing. Both loops run every step, at the IMU rate.
//!
//! The controller is estimate-driven only; it never sees plant state.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{mixing_inverse, RotorCommand, StateVector, ThrustTorque, VehicleParams};

/// Gain table for both loops. Defaults give a stable, moderately damped
/// closed loop at the 1 kHz rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub pos_p: [f64; 3],
    pub pos_i: f64,
    pub pos_d: f64,
    pub att_p: f64,
    pub att_i: f64,
    pub att_d: f64,
    /// Anti-windup bound on each integrator component.
    pub integrator_clamp: f64,
    /// Attitude set-point clamp (rad).
    pub setpoint_clamp: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            pos_p: [1.0, 1.0, 2.0],
            pos_i: 0.02,
            pos_d: 1.2,
            att_p: 8.0,
            att_i: 0.05,
            att_d: 2.5,
            integrator_clamp: 2.0,
            setpoint_clamp: std::f64::consts::FRAC_PI_4,
        }
    }
}

/// A mission set-point with its capture radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub target: Vector3<f64>,
    pub capture_radius: f64,
}

/// Internal controller state: integrators, the previous-measurement
/// memories feeding the derivative terms, and the active waypoint index.
///
/// The derivative terms differentiate the measured quantity, not the raw
/// error, so a set-point step (new waypoint, new attitude reference)
/// cannot kick them; for a constant reference the two are identical.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerState {
    pub pos_integral: Vector3<f64>,
    pub att_integral: Vector3<f64>,
    pub prev_pos_meas: Vector3<f64>,
    pub prev_att_meas: Vector3<f64>,
    pub waypoint_idx: usize,
    /// False until the first step has seeded the derivative memories.
    pub primed: bool,
}

impl ControllerState {
    /// Flat view used in run records; layout is stable.
    pub fn to_array(&self) -> [f64; 14] {
        [
            self.pos_integral.x,
            self.pos_integral.y,
            self.pos_integral.z,
            self.att_integral.x,
            self.att_integral.y,
            self.att_integral.z,
            self.prev_pos_meas.x,
            self.prev_pos_meas.y,
            self.prev_pos_meas.z,
            self.prev_att_meas.x,
            self.prev_att_meas.y,
            self.prev_att_meas.z,
            self.waypoint_idx as f64,
            if self.primed { 1.0 } else { 0.0 },
        ]
    }

    pub fn from_array(a: &[f64; 14]) -> Self {
        ControllerState {
            pos_integral: Vector3::new(a[0], a[1], a[2]),
            att_integral: Vector3::new(a[3], a[4], a[5]),
            prev_pos_meas: Vector3::new(a[6], a[7], a[8]),
            prev_att_meas: Vector3::new(a[9], a[10], a[11]),
            waypoint_idx: a[12] as usize,
            primed: a[13] != 0.0,
        }
    }

    /// Norm over the continuous part of the state (integrators and
    /// derivative memories); used by the incremental-stability analysis.
    pub fn continuous_norm_sq(&self) -> f64 {
        self.pos_integral.norm_squared()
            + self.att_integral.norm_squared()
            + self.prev_pos_meas.norm_squared()
            + self.prev_att_meas.norm_squared()
    }
}

/// Attitude and thrust references handed from the position loop to the
/// attitude loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoints {
    pub phi_ref: f64,
    pub theta_ref: f64,
    pub psi_ref: f64,
    pub thrust_ref: f64,
}

/// Position loop: PID on the waypoint error in the global frame, then
/// small-angle inversion of the translational rows with the estimated yaw
/// held. Yaw reference is fixed at zero for the whole mission.
pub fn position_loop(
    ctrl: &ControllerState,
    x_hat: &StateVector,
    target: &Vector3<f64>,
    gains: &PidGains,
    params: &VehicleParams,
    td: f64,
) -> (ControllerState, Setpoints) {
    let mut next = *ctrl;
    let meas = x_hat.position();
    let err = target - meas;

    // Derivative on the measurement: d(err)/dt with the set-point held.
    let prev = if ctrl.primed { ctrl.prev_pos_meas } else { meas };
    let derr = -(meas - prev) / td;
    next.prev_pos_meas = meas;

    next.pos_integral = clamp_vec(
        ctrl.pos_integral + err * td,
        gains.integrator_clamp,
    );

    let accel = Vector3::new(
        gains.pos_p[0] * err.x,
        gains.pos_p[1] * err.y,
        gains.pos_p[2] * err.z,
    ) + next.pos_integral * gains.pos_i
        + derr * gains.pos_d;

    let angles = x_hat.angles();
    let (sin_psi, cos_psi) = angles.z.sin_cos();

    // Vertical row: z_dd = g - (F/m) cos(phi) cos(theta). The cosine product
    // is floored at cos^2 of the set-point clamp so an excursion beyond the
    // clamp cannot blow up the inversion.
    let cos_floor = gains.setpoint_clamp.cos().powi(2);
    let tilt = (angles.x.cos() * angles.y.cos()).max(cos_floor);
    let thrust_ref = (params.mass * (params.gravity - accel.z) / tilt).max(0.0);

    // Horizontal rows, small angle: a_x ~ (F/m)(theta cos psi + phi sin psi),
    // a_y ~ (F/m)(theta sin psi - phi cos psi).
    let f_safe = thrust_ref.max(0.1 * params.mass * params.gravity);
    let m_over_f = params.mass / f_safe;
    let clamp = gains.setpoint_clamp;
    let theta_ref = (m_over_f * (accel.x * cos_psi + accel.y * sin_psi)).clamp(-clamp, clamp);
    let phi_ref = (m_over_f * (accel.x * sin_psi - accel.y * cos_psi)).clamp(-clamp, clamp);

    (next, Setpoints { phi_ref, theta_ref, psi_ref: 0.0, thrust_ref })
}

/// Attitude loop: PID on the set-point error producing torque demands,
/// allocated through the exact mixing inverse with thrust priority.
///
/// Allocation: the collective-thrust share of each rotor is reserved
/// first; the differential (torque) share is then scaled by the largest
/// factor that keeps every channel inside `[0, rotor_max_sq]`. Torque
/// demands beyond the rotors' differential authority therefore soften
/// the attitude response instead of corrupting the collective thrust.
pub fn attitude_loop(
    ctrl: &ControllerState,
    x_hat: &StateVector,
    setpoints: &Setpoints,
    gains: &PidGains,
    params: &VehicleParams,
    td: f64,
) -> (ControllerState, RotorCommand) {
    let mut next = *ctrl;
    let angles = x_hat.angles();
    let err = Vector3::new(
        setpoints.phi_ref - angles.x,
        setpoints.theta_ref - angles.y,
        setpoints.psi_ref - angles.z,
    );

    // Derivative on the measured attitude, immune to set-point steps.
    let prev = if ctrl.primed { ctrl.prev_att_meas } else { angles };
    let derr = -(angles - prev) / td;
    next.prev_att_meas = angles;
    next.primed = true;

    next.att_integral = clamp_vec(ctrl.att_integral + err * td, gains.integrator_clamp);

    let tau = err * gains.att_p + next.att_integral * gains.att_i + derr * gains.att_d;

    let base = (setpoints.thrust_ref / (4.0 * params.thrust_coeff))
        .clamp(0.0, params.rotor_max_sq);
    let differential = mixing_inverse(
        &ThrustTorque { force: 0.0, tau_x: tau.x, tau_y: tau.y, tau_z: tau.z },
        params,
    );
    let mut scale = 1.0f64;
    for d in differential.0 {
        if base + d < 0.0 {
            scale = scale.min(base / -d);
        } else if base + d > params.rotor_max_sq {
            scale = scale.min((params.rotor_max_sq - base) / d);
        }
    }
    let cmd = RotorCommand(differential.0.map(|d| base + scale * d));
    (next, cmd.saturated(params.rotor_max_sq))
}

/// Both loops against a fixed target, without waypoint bookkeeping. The
/// warm-up hover phase and the Lipschitz analysis drive the controller
/// through this entry point.
pub fn controller_step_at(
    ctrl: &ControllerState,
    x_hat: &StateVector,
    target: &Vector3<f64>,
    gains: &PidGains,
    params: &VehicleParams,
    td: f64,
) -> (ControllerState, RotorCommand) {
    let (mid, setpoints) = position_loop(ctrl, x_hat, target, gains, params, td);
    attitude_loop(&mid, x_hat, &setpoints, gains, params, td)
}

/// Full mission step: advance the waypoint index when the estimate enters
/// the capture radius (holding the last waypoint forever), then run both
/// loops against the active target.
pub fn controller_step(
    ctrl: &ControllerState,
    x_hat: &StateVector,
    mission: &[Waypoint],
    gains: &PidGains,
    params: &VehicleParams,
    td: f64,
) -> (ControllerState, RotorCommand) {
    assert!(!mission.is_empty(), "mission must contain at least one waypoint");
    let mut staged = *ctrl;
    let mut active = mission[staged.waypoint_idx.min(mission.len() - 1)];
    if staged.waypoint_idx + 1 < mission.len()
        && (x_hat.position() - active.target).norm() < active.capture_radius
    {
        staged.waypoint_idx += 1;
        active = mission[staged.waypoint_idx];
    }
    controller_step_at(&staged, x_hat, &active.target, gains, params, td)
}

fn clamp_vec(v: Vector3<f64>, bound: f64) -> Vector3<f64> {
    Vector3::new(
        v.x.clamp(-bound, bound),
        v.y.clamp(-bound, bound),
        v.z.clamp(-bound, bound),
    )
}
