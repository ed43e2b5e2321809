//! Python bindings for the simulator core: estimators, controller policies,
//! service-rate allocation, scenario generation and full simulation runs.

// The #[pymethods]/#[pyfunction] macro expansions trip this lint.
#![allow(clippy::useless_conversion)]

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use caas_sim_core::allocation::{
    allocate, confirm_ttc, optimal_fleet, optimal_rate, AllocationConfig, DemandKind,
    WorkloadDemand,
};
use caas_sim_core::control::{aimd_step, ControllerConfig};
use caas_sim_core::estimation::{AdHocState, ArmaState, KalmanState};
use caas_sim_core::simulation::{generate_paper_schedule, Engine, PaperScheduleConfig, Scenario};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "KalmanEstimator")]
struct PyKalman(KalmanState);

#[pymethods]
impl PyKalman {
    #[new]
    #[pyo3(signature = (sigma_z_sq = 0.5, sigma_v_sq = 0.5))]
    fn new(sigma_z_sq: f64, sigma_v_sq: f64) -> Self {
        PyKalman(KalmanState::with_variances(sigma_z_sq, sigma_v_sq))
    }

    fn update(&mut self, measurement: f64) -> PyResult<f64> {
        self.0.update(measurement).map_err(err)
    }

    #[getter]
    fn estimate(&self) -> f64 {
        self.0.b_hat
    }

    #[getter]
    fn gain(&self) -> f64 {
        self.0.kappa
    }
}

#[pyclass(name = "AdHocEstimator")]
struct PyAdHoc(AdHocState);

#[pymethods]
impl PyAdHoc {
    #[new]
    #[pyo3(signature = (kappa = 0.1))]
    fn new(kappa: f64) -> Self {
        PyAdHoc(AdHocState::with_gain(kappa))
    }

    fn update(&mut self, measurement: f64) -> PyResult<f64> {
        self.0.update(measurement).map_err(err)
    }

    #[getter]
    fn estimate(&self) -> f64 {
        self.0.b_hat
    }
}

#[pyclass(name = "ArmaEstimator")]
struct PyArma(ArmaState);

#[pymethods]
impl PyArma {
    #[new]
    #[pyo3(signature = (delta = 0.8, gamma = 0.15))]
    fn new(delta: f64, gamma: f64) -> PyResult<Self> {
        ArmaState::new(delta, gamma).map(PyArma).map_err(err)
    }

    fn update(&mut self, b_norm: f64) -> PyResult<f64> {
        self.0.update(b_norm).map_err(err)
    }
}

/// One additive-increase / multiplicative-decrease step of the fleet target.
#[pyfunction]
#[pyo3(signature = (n_tot, n_star, alpha = 5.0, beta = 0.9, n_min = 10.0, n_max = 100.0))]
fn aimd(n_tot: f64, n_star: f64, alpha: f64, beta: f64, n_min: f64, n_max: f64) -> f64 {
    let cfg = ControllerConfig {
        alpha,
        beta,
        n_min,
        n_max,
        ..ControllerConfig::default()
    };
    aimd_step(n_tot, n_star, &cfg)
}

/// Cost-optimal service rate r/d for a confirmed workload.
#[pyfunction]
fn service_rate(required_cus: f64, remaining_ttc: f64) -> PyResult<f64> {
    optimal_rate(required_cus, remaining_ttc).map_err(err)
}

/// Deadline actually confirmed for a requested TTC under the per-workload cap.
#[pyfunction]
#[pyo3(signature = (required_cus, requested_ttc, per_workload_cap = 10.0))]
fn confirmed_ttc(required_cus: f64, requested_ttc: f64, per_workload_cap: f64) -> f64 {
    confirm_ttc(required_cus, requested_ttc, per_workload_cap)
}

fn demands_from_py(demands: Vec<(String, Option<(f64, f64)>)>) -> Vec<WorkloadDemand> {
    demands
        .into_iter()
        .map(|(id, confirmed)| WorkloadDemand {
            id,
            kind: match confirmed {
                Some((required_cus, remaining_ttc)) => DemandKind::Confirmed {
                    required_cus,
                    remaining_ttc,
                },
                None => DemandKind::Bootstrapping,
            },
        })
        .collect()
}

/// Ideal fleet size for a set of demands. Each demand is
/// `(workload_id, (required_cus, remaining_ttc) | None)`; `None` marks a
/// bootstrapping workload.
#[pyfunction]
fn ideal_fleet(demands: Vec<(String, Option<(f64, f64)>)>) -> f64 {
    optimal_fleet(&demands_from_py(demands), &AllocationConfig::default())
}

/// Proportional-fair allocation of service rates against `n_tot` instances.
/// Returns `(rates_by_workload, n_star, regime_name)`.
#[pyfunction]
fn allocate_rates(
    demands: Vec<(String, Option<(f64, f64)>)>,
    n_tot: f64,
) -> (std::collections::BTreeMap<String, f64>, f64, String) {
    let plan = allocate(
        &demands_from_py(demands),
        n_tot,
        &AllocationConfig::default(),
    );
    (plan.rates, plan.n_star, format!("{:?}", plan.regime))
}

/// Canonical 30-workload scenario as a JSON string.
#[pyfunction]
#[pyo3(signature = (seed, requested_ttc = 7620.0))]
fn gen_scenario(seed: u64, requested_ttc: f64) -> String {
    let cfg = PaperScheduleConfig {
        requested_ttc,
        ..PaperScheduleConfig::default()
    };
    generate_paper_schedule(seed, &cfg).to_json()
}

/// Runs a full simulation from a scenario JSON string and returns the
/// result (cost series, completions, prediction logs) as a JSON string.
#[pyfunction]
fn run_scenario(scenario_json: &str) -> PyResult<String> {
    let scenario = Scenario::from_json(scenario_json).map_err(err)?;
    let result = Engine::run(scenario).map_err(err)?;
    serde_json::to_string(&result).map_err(err)
}

#[pymodule]
fn caas_sim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKalman>()?;
    m.add_class::<PyAdHoc>()?;
    m.add_class::<PyArma>()?;
    m.add_function(wrap_pyfunction!(aimd, m)?)?;
    m.add_function(wrap_pyfunction!(service_rate, m)?)?;
    m.add_function(wrap_pyfunction!(confirmed_ttc, m)?)?;
    m.add_function(wrap_pyfunction!(ideal_fleet, m)?)?;
    m.add_function(wrap_pyfunction!(allocate_rates, m)?)?;
    m.add_function(wrap_pyfunction!(gen_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
