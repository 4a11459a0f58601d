//! Python bindings: scenario config, single runs, paired deviation,
//! detector verdicts and the closed-form analysis quantities.
//!
//! Build with `cargo build -p spoofsim-py --release`; the produced
//! `libspoofsim_py.so` imports as the `spoofsim_py` module once renamed
//! (see `python/smoke_test.py`).

use nalgebra::{DMatrix, DVector, Vector3};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use spoofsim_core::analysis;
use spoofsim_core::attack;
use spoofsim_core::dynamics::{motor_mixing, RotorCommand, VehicleParams};
use spoofsim_core::harness::{self, ScenarioConfig};
use spoofsim_core::SimError;

fn to_py_err(e: SimError) -> PyErr {
    match e {
        SimError::Parse(_) | SimError::Validation(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Scenario configuration wrapper.
#[pyclass(name = "Scenario", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// The shipped square-mission scenario.
    #[staticmethod]
    fn default() -> Self {
        PyScenario { inner: ScenarioConfig::default() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyScenario { inner: ScenarioConfig::parse(text).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn from_path(path: &str) -> PyResult<Self> {
        Ok(PyScenario {
            inner: ScenarioConfig::from_path(std::path::Path::new(path)).map_err(to_py_err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.emit()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    /// Shrink the run for quick experiments (horizon and warm-up in
    /// seconds); returns a new scenario.
    fn with_horizon(&self, horizon: f64, warmup: f64) -> PyResult<Self> {
        let mut cfg = self.inner.clone();
        cfg.sim.horizon = horizon;
        cfg.sim.warmup = warmup;
        cfg.validate().map_err(to_py_err)?;
        Ok(PyScenario { inner: cfg })
    }

    fn with_drag(&self, enabled: bool) -> PyResult<Self> {
        let mut cfg = self.inner.clone();
        cfg.sim.drag_enabled = enabled;
        cfg.validate().map_err(to_py_err)?;
        Ok(PyScenario { inner: cfg })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(horizon={}s, warmup={}s, waypoints={}, attack_enabled={})",
            self.inner.sim.horizon,
            self.inner.sim.warmup,
            self.inner.mission.waypoints.len(),
            self.inner.attack.enabled
        )
    }
}

/// A recorded simulation run.
#[pyclass(name = "RunRecord")]
struct PyRunRecord {
    inner: harness::RunRecord,
}

#[pymethods]
impl PyRunRecord {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.meta.seed
    }

    #[getter]
    fn attacked(&self) -> bool {
        self.inner.meta.attack_enabled
    }

    fn __len__(&self) -> usize {
        self.inner.steps.len()
    }

    /// Step indices (warm-up steps are negative).
    fn steps(&self) -> Vec<i64> {
        self.inner.steps.iter().map(|s| s.k).collect()
    }

    fn times(&self) -> Vec<f64> {
        self.inner.steps.iter().map(|s| s.t).collect()
    }

    /// True positions as (x, y, z) tuples.
    fn positions(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .steps
            .iter()
            .map(|s| {
                let p = s.truth.position();
                (p.x, p.y, p.z)
            })
            .collect()
    }

    /// Fused position estimates as (x, y, z) tuples.
    fn estimated_positions(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .steps
            .iter()
            .map(|s| {
                let p = s.estimate.position();
                (p.x, p.y, p.z)
            })
            .collect()
    }

    fn chi2_statistics(&self) -> Vec<f64> {
        self.inner.steps.iter().map(|s| s.chi2_stat).collect()
    }

    fn chi2_alarms(&self) -> Vec<bool> {
        self.inner.steps.iter().map(|s| s.chi2_alarm).collect()
    }

    fn cusum_alarms(&self) -> Vec<bool> {
        self.inner.steps.iter().map(|s| s.cusum_alarm).collect()
    }

    /// Final waypoint index reached by the controller.
    fn final_waypoint_index(&self) -> usize {
        self.inner.steps.last().map(|s| s.ctrl.waypoint_idx).unwrap_or(0)
    }

    /// Per-step position deviation against a paired run.
    fn deviation_to(&self, other: &PyRunRecord) -> PyResult<Vec<f64>> {
        let series = analysis::deviation_series(&self.inner, &other.inner, &[])
            .map_err(to_py_err)?;
        Ok(series.deviation)
    }

    /// Write the CSV + noise sidecar into a directory.
    fn save(&self, dir: &str) -> PyResult<String> {
        let path = harness::save_run(&self.inner, std::path::Path::new(dir))
            .map_err(to_py_err)?;
        Ok(path.display().to_string())
    }
}

/// Run one scenario; `attack` gates the GPS injection only.
#[pyfunction]
#[pyo3(signature = (scenario, seed, attack=true))]
fn run_scenario(scenario: &PyScenario, seed: u64, attack: bool) -> PyResult<PyRunRecord> {
    let record = harness::run_scenario(&scenario.inner, seed, attack).map_err(to_py_err)?;
    Ok(PyRunRecord { inner: record })
}

/// The ramp attack offset `a_k = -C (k+1-k0) Td`.
#[pyfunction]
fn ramp_signal(k: i64, start_step: i64, c: (f64, f64, f64), td: f64) -> (f64, f64, f64) {
    let a = attack::ramp_attack_signal(k, start_step, &Vector3::new(c.0, c.1, c.2), td);
    (a.x, a.y, a.z)
}

/// Thrust and torques from squared rotor speeds with default vehicle
/// constants unless overridden.
#[pyfunction]
#[pyo3(signature = (w_sq, thrust_coeff=None, drag_coeff=None, arm_length=None))]
fn rotor_mixing(
    w_sq: (f64, f64, f64, f64),
    thrust_coeff: Option<f64>,
    drag_coeff: Option<f64>,
    arm_length: Option<f64>,
) -> (f64, f64, f64, f64) {
    let mut params = VehicleParams::default();
    if let Some(b) = thrust_coeff {
        params.thrust_coeff = b;
    }
    if let Some(d) = drag_coeff {
        params.drag_coeff = d;
    }
    if let Some(l) = arm_length {
        params.arm_length = l;
    }
    let ft = motor_mixing(&RotorCommand([w_sq.0, w_sq.1, w_sq.2, w_sq.3]), &params);
    (ft.force, ft.tau_x, ft.tau_y, ft.tau_z)
}

/// Closed-form stealthiness bound; returns `(b_eps, eps)`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn stealth_bound(
    kappa: f64,
    lambda: f64,
    l_h: f64,
    l_g: f64,
    l_fc: f64,
    td: f64,
    n_g: i64,
    sigma_omega_diag: [f64; 6],
    sigma_p_diag: [f64; 3],
    c_norm: f64,
) -> PyResult<(f64, f64)> {
    let result = analysis::stealth_bound(analysis::StealthBoundInputs {
        kappa,
        lambda,
        l_h,
        l_g,
        l_fc,
        td,
        n_g,
        sigma_omega: nalgebra::SMatrix::<f64, 6, 6>::from_diagonal(
            &nalgebra::SVector::<f64, 6>::from_row_slice(&sigma_omega_diag),
        ),
        sigma_p: nalgebra::Matrix3::from_diagonal(&Vector3::from_row_slice(&sigma_p_diag)),
        c_norm,
    })
    .map_err(to_py_err)?;
    Ok((result.b_eps, result.epsilon))
}

/// First step at which the ramp attack guarantees deviation `alpha`.
#[pyfunction]
fn min_effective_step(
    alpha: f64,
    c_norm: f64,
    kappa: f64,
    l_g: f64,
    l_fc: f64,
    td: f64,
) -> i64 {
    analysis::min_effective_step(alpha, c_norm, kappa, l_g, l_fc, td)
}

/// Equal-covariance Gaussian KL divergence.
#[pyfunction]
fn gaussian_kl(mu_q: Vec<f64>, mu_p: Vec<f64>, sigma_diag: Vec<f64>) -> PyResult<f64> {
    if mu_q.len() != mu_p.len() || mu_q.len() != sigma_diag.len() {
        return Err(PyValueError::new_err("mu_q, mu_p and sigma_diag lengths must match"));
    }
    let n = mu_q.len();
    let sigma = DMatrix::from_fn(n, n, |i, j| if i == j { sigma_diag[i] } else { 0.0 });
    analysis::gaussian_kl(
        &DVector::from_vec(mu_q),
        &DVector::from_vec(mu_p),
        &sigma,
    )
    .map_err(to_py_err)
}

/// Max replay discrepancy of the fake-state identity on an attacked run.
#[pyfunction]
fn fake_replay_error(record: &PyRunRecord, scenario: &PyScenario) -> PyResult<f64> {
    analysis::fake_replay_error(&record.inner, &scenario.inner).map_err(to_py_err)
}

#[pymodule]
fn spoofsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunRecord>()?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(ramp_signal, m)?)?;
    m.add_function(wrap_pyfunction!(rotor_mixing, m)?)?;
    m.add_function(wrap_pyfunction!(stealth_bound, m)?)?;
    m.add_function(wrap_pyfunction!(min_effective_step, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kl, m)?)?;
    m.add_function(wrap_pyfunction!(fake_replay_error, m)?)?;
    Ok(())
}
