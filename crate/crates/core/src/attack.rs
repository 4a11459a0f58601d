//! False-data injection on the GPS channel.
//!
//! The injection layer is a generic measurement interceptor: on each GPS
//! tick at or after the start step it adds an offset computed by the
//! configured signal. Signals are black-box by construction; they read
//! only the step index, the step period and their own constants, never any
//! plant or estimator state. The IMU channel is never touched.

use nalgebra::Vector3;

/// Attack signal shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackSignal {
    /// Linearly growing offset `a_k = -C t_{k+1}`, `t_{k+1} = (k+1-k0) Td`.
    /// The attack clock restarts at the start step so mid-mission attacks
    /// keep the same shape.
    Ramp { slope: Vector3<f64> },
    /// Constant offset; crude and detectable, used as the negative control.
    Bias { offset: Vector3<f64> },
}

/// The FDI layer configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub signal: AttackSignal,
    /// First step (in loop step indices) at which injection may happen.
    pub start_step: i64,
    pub enabled: bool,
}

impl AttackConfig {
    /// Magnitude knob of the configured signal (`||C||` for the ramp).
    pub fn magnitude(&self) -> f64 {
        match self.signal {
            AttackSignal::Ramp { slope } => slope.norm(),
            AttackSignal::Bias { offset } => offset.norm(),
        }
    }
}

/// The ramp signal of the stealthy construction: `a = -C (k+1-k0) Td`.
pub fn ramp_attack_signal(k: i64, start_step: i64, slope: &Vector3<f64>, td: f64) -> Vector3<f64> {
    let t_next = (k + 1 - start_step) as f64 * td;
    -slope * t_next
}

/// Offset injected at step `k`, or `None` when the layer is inactive.
/// Callers invoke this only on GPS ticks.
pub fn attack_offset(cfg: &AttackConfig, k: i64, td: f64) -> Option<Vector3<f64>> {
    if !cfg.enabled || k < cfg.start_step {
        return None;
    }
    Some(match cfg.signal {
        AttackSignal::Ramp { slope } => ramp_attack_signal(k, cfg.start_step, &slope, td),
        AttackSignal::Bias { offset } => offset,
    })
}

/// Additive corruption of a delivered GPS measurement.
pub fn inject(gps: &Vector3<f64>, offset: &Vector3<f64>) -> Vector3<f64> {
    gps + offset
}
