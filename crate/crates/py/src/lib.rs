//! Python bindings: model types, integration, the three optimizers, the
//! maximum-principle checks, agent-based comparison and named scenarios.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use incentive_core::abm;
use incentive_core::integrate;
use incentive_core::model::{self, ClassState, DegreeClass, ReferralGating, StateVector};
use incentive_core::optimize::{self, NlpOptions, OptimizationResult, SwitchOptions};
use incentive_core::pmp::{self, FbsOptions, LemmaTolerances};
use incentive_core::scenario;
use incentive_core::validation::{self, ValidationOptions};
use incentive_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::IntegrationDrift { .. } | Error::GraphConstruction(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn gating(name: &str) -> PyResult<ReferralGating> {
    match name {
        "buyer" => Ok(ReferralGating::Buyer),
        "referrer" => Ok(ReferralGating::Referrer),
        _ => Err(PyValueError::new_err(format!(
            "gating must be 'buyer' or 'referrer', got '{name}'"
        ))),
    }
}

/// Rate and pay-out constants. Omitted arguments take base-scenario values.
#[pyclass(name = "ModelParams", module = "incentive", from_py_object)]
#[derive(Clone)]
struct PyModelParams {
    inner: model::ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (
        alpha=0.08, beta=0.1, gamma=0.1, delta=0.1, eps1=0.05, eps2=0.05,
        cost_referral=0.25, cost_direct=0.3, horizon=10.0, gating="buyer"
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: f64,
        eps1: f64,
        eps2: f64,
        cost_referral: f64,
        cost_direct: f64,
        horizon: f64,
        gating: &str,
    ) -> PyResult<Self> {
        let inner = model::ModelParams {
            alpha,
            beta,
            gamma,
            delta,
            eps1,
            eps2,
            cost_referral,
            cost_direct,
            horizon,
            gating: self::gating(gating)?,
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }
    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }
    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }
    #[getter]
    fn eps1(&self) -> f64 {
        self.inner.eps1
    }
    #[getter]
    fn eps2(&self) -> f64 {
        self.inner.eps2
    }
    #[getter]
    fn cost_referral(&self) -> f64 {
        self.inner.cost_referral
    }
    #[getter]
    fn cost_direct(&self) -> f64 {
        self.inner.cost_direct
    }
    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }
    #[getter]
    fn gating(&self) -> &'static str {
        match self.inner.gating {
            ReferralGating::Buyer => "buyer",
            ReferralGating::Referrer => "referrer",
        }
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "ModelParams(alpha={}, beta={}, gamma={}, delta={}, eps1={}, eps2={}, \
             cost_referral={}, cost_direct={}, horizon={}, gating='{}')",
            p.alpha,
            p.beta,
            p.gamma,
            p.delta,
            p.eps1,
            p.eps2,
            p.cost_referral,
            p.cost_direct,
            p.horizon,
            self.gating()
        )
    }
}

/// Degree classes and the conditional link distribution.
#[pyclass(name = "Network", module = "incentive", from_py_object)]
#[derive(Clone)]
struct PyNetwork {
    inner: model::ClassNetwork,
}

#[pymethods]
impl PyNetwork {
    /// `classes` is a list of `(degree, weight)`; `mixing[k][j]` is `P(j|k)`.
    #[new]
    fn new(classes: Vec<(u32, f64)>, mixing: Vec<Vec<f64>>) -> PyResult<Self> {
        let classes = classes
            .into_iter()
            .map(|(degree, weight)| DegreeClass { degree, weight })
            .collect();
        Ok(Self {
            inner: model::ClassNetwork::new(classes, mixing).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (degree=6))]
    fn regular(degree: u32) -> Self {
        Self {
            inner: model::ClassNetwork::regular(degree),
        }
    }

    /// Two classes with `P(A|B)` completed from the balance equation.
    #[staticmethod]
    fn two_class(degree_a: u32, weight_a: f64, degree_b: u32, p_b_given_a: f64) -> PyResult<Self> {
        let inner = model::balance_complete(
            DegreeClass {
                degree: degree_a,
                weight: weight_a,
            },
            DegreeClass {
                degree: degree_b,
                weight: 1.0 - weight_a,
            },
            p_b_given_a,
        )
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn mixing(&self) -> Vec<Vec<f64>> {
        self.inner.mixing().to_vec()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights()
    }

    #[getter]
    fn degrees(&self) -> Vec<u32> {
        self.inner.classes().iter().map(|c| c.degree).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Piecewise-constant controls: `u[k][n]`, `v[k][n]` on a grid of `step`.
#[pyclass(name = "Schedule", module = "incentive", from_py_object)]
#[derive(Clone)]
struct PySchedule {
    inner: model::ControlSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    fn new(step: f64, u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Self {
        Self {
            inner: model::ControlSchedule { step, u, v },
        }
    }

    #[staticmethod]
    #[pyo3(signature = (classes, horizon=10.0, step=0.1, u=0.0, v=0.0))]
    fn constant(classes: usize, horizon: f64, step: f64, u: f64, v: f64) -> PyResult<Self> {
        Ok(Self {
            inner: model::ControlSchedule::constant(classes, horizon, step, u, v).map_err(err)?,
        })
    }

    #[getter]
    fn step(&self) -> f64 {
        self.inner.step
    }
    #[getter]
    fn u(&self) -> Vec<Vec<f64>> {
        self.inner.u.clone()
    }
    #[getter]
    fn v(&self) -> Vec<Vec<f64>> {
        self.inner.v.clone()
    }

    /// One strategy label per class; the schedule must be binary.
    fn labels(&self) -> PyResult<Vec<String>> {
        Ok(optimize::classify(&self.inner)
            .map_err(err)?
            .iter()
            .map(|l| l.to_string())
            .collect())
    }

    /// One program shape per class, as `(referral, direct)`.
    fn shapes(&self) -> Vec<(String, String)> {
        self.inner
            .u
            .iter()
            .zip(&self.inner.v)
            .map(|(u, v)| {
                (
                    optimize::program_shape(u).to_string(),
                    optimize::program_shape(v).to_string(),
                )
            })
            .collect()
    }
}

/// Sampled states and cumulative costs.
#[pyclass(name = "Trajectory", module = "incentive")]
struct PyTrajectory {
    inner: integrate::Trajectory,
    profit: f64,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times().to_vec()
    }

    #[getter]
    fn profit(&self) -> f64 {
        self.profit
    }

    /// `(i, r, theta)` of class `k` at every grid point.
    fn class_series(&self, k: usize) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if k >= self.inner.classes() {
            return Err(PyValueError::new_err(format!("no class {k}")));
        }
        let states: Vec<ClassState> = (0..self.inner.len())
            .map(|m| self.inner.class_state(m, k))
            .collect();
        Ok((
            states.iter().map(|s| s.i).collect(),
            states.iter().map(|s| s.r).collect(),
            states.iter().map(|s| s.theta).collect(),
        ))
    }

    /// Cumulative `(referral, direct)` spend at every grid point.
    fn costs(&self) -> (Vec<f64>, Vec<f64>) {
        (0..self.inner.len())
            .map(|m| (self.inner.cost_referral(m), self.inner.cost_direct(m)))
            .unzip()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Best schedule of one optimizer.
#[pyclass(name = "Solution", module = "incentive")]
struct PySolution {
    #[pyo3(get)]
    solver: String,
    #[pyo3(get)]
    profit: f64,
    #[pyo3(get)]
    labels: Vec<String>,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    summary: String,
    schedule: model::ControlSchedule,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn schedule(&self) -> PySchedule {
        PySchedule {
            inner: self.schedule.clone(),
        }
    }

    fn __repr__(&self) -> String {
        self.summary.clone()
    }
}

impl From<OptimizationResult> for PySolution {
    fn from(r: OptimizationResult) -> Self {
        Self {
            solver: r.solver.to_string(),
            profit: r.profit,
            labels: r.labels().iter().map(|l| l.to_string()).collect(),
            converged: r.diagnostics.status != Some(optimize::SolveStatus::StepCollapse),
            summary: r.summary_line(),
            schedule: r.schedule,
        }
    }
}

fn initial(x0: Option<Vec<(f64, f64, f64)>>, classes: usize) -> PyResult<StateVector> {
    match x0 {
        None => Ok(StateVector::fresh(classes)),
        Some(v) => StateVector::new(
            v.into_iter()
                .map(|(i, r, t)| ClassState::new(i, r, t))
                .collect(),
        )
        .map_err(err),
    }
}

/// Integrates the dynamics; `x0` is a list of `(i, r, theta)` per class.
#[pyfunction(name = "integrate")]
#[pyo3(signature = (params, network, schedule, x0=None, dt=0.01))]
fn py_integrate(
    py: Python<'_>,
    params: &PyModelParams,
    network: &PyNetwork,
    schedule: &PySchedule,
    x0: Option<Vec<(f64, f64, f64)>>,
    dt: f64,
) -> PyResult<PyTrajectory> {
    let x0 = initial(x0, network.inner.len())?;
    let (p, net, s) = (&params.inner, &network.inner, &schedule.inner);
    py.detach(|| {
        let traj = integrate::integrate(&x0, s, net, p, dt)?;
        let profit = integrate::profit(&traj, net);
        Ok(PyTrajectory { inner: traj, profit })
    })
    .map_err(err)
}

/// Forward-backward sweep (single class).
#[pyfunction]
#[pyo3(signature = (params, network=None, dt=0.01, control_dt=0.1))]
fn fbs(
    py: Python<'_>,
    params: &PyModelParams,
    network: Option<&PyNetwork>,
    dt: f64,
    control_dt: f64,
) -> PyResult<PySolution> {
    let net = network.map_or_else(|| model::ClassNetwork::regular(6), |n| n.inner.clone());
    let p = params.inner;
    let r = py
        .detach(|| {
            pmp::fbs_solve(
                &StateVector::fresh(1),
                &net,
                &p,
                &FbsOptions {
                    dt,
                    control_dt,
                    ..FbsOptions::default()
                },
            )
        })
        .map_err(err)?;
    let labels: Vec<String> = optimize::classify(&r.schedule)
        .map_err(err)?
        .iter()
        .map(|l| l.to_string())
        .collect();
    let converged = r.status == pmp::FbsStatus::Converged;
    Ok(PySolution {
        solver: "fbs".into(),
        profit: r.profit,
        summary: format!(
            "profit={} label={} solver=fbs iterations={}",
            r.profit,
            labels.join("/"),
            r.iterations
        ),
        labels,
        converged,
        schedule: r.schedule,
    })
}

/// Multi-start switching-time optimization.
#[pyfunction]
#[pyo3(signature = (params, network, starts=50, seed=42, dt=0.01, control_dt=0.1))]
fn switch_opt(
    py: Python<'_>,
    params: &PyModelParams,
    network: &PyNetwork,
    starts: usize,
    seed: u64,
    dt: f64,
    control_dt: f64,
) -> PyResult<PySolution> {
    let x0 = StateVector::fresh(network.inner.len());
    let opts = SwitchOptions {
        starts,
        seed,
        dt,
        control_dt,
        ..SwitchOptions::default()
    };
    let (p, net) = (&params.inner, &network.inner);
    py.detach(|| optimize::optimize_switch_times(&x0, net, p, &opts))
        .map(PySolution::from)
        .map_err(err)
}

/// Multi-start relaxed NLP with rounding.
#[pyfunction]
#[pyo3(signature = (params, network, starts=20, seed=42, dt=0.01, control_dt=0.1))]
fn nlp(
    py: Python<'_>,
    params: &PyModelParams,
    network: &PyNetwork,
    starts: usize,
    seed: u64,
    dt: f64,
    control_dt: f64,
) -> PyResult<PySolution> {
    let x0 = StateVector::fresh(network.inner.len());
    let opts = NlpOptions {
        starts,
        seed,
        dt,
        control_dt,
        ..NlpOptions::default()
    };
    let (p, net) = (&params.inner, &network.inner);
    py.detach(|| optimize::nlp_solve(&x0, net, p, &opts))
        .map(PySolution::from)
        .map_err(err)
}

/// Structural checks on the refined single-class extremal, as a list of
/// `(name, passed, worst)`.
#[pyfunction]
#[pyo3(signature = (params, hamiltonian_tol=1e-3, dt=0.01, control_dt=0.1))]
fn lemmas(
    py: Python<'_>,
    params: &PyModelParams,
    hamiltonian_tol: f64,
    dt: f64,
    control_dt: f64,
) -> PyResult<Vec<(String, bool, f64)>> {
    let p = params.inner;
    let report = py
        .detach(|| -> incentive_core::Result<_> {
            let x0 = StateVector::fresh(1);
            let net = model::ClassNetwork::regular(6);
            let fbs = pmp::fbs_solve(
                &x0,
                &net,
                &p,
                &FbsOptions {
                    dt,
                    control_dt,
                    ..FbsOptions::default()
                },
            )?;
            let ex = pmp::refine_extremal(&x0, &net, &p, &fbs.costate, dt, 100)?;
            let tol = LemmaTolerances {
                hamiltonian_constancy: hamiltonian_tol,
                ..LemmaTolerances::default()
            };
            Ok(pmp::verify_lemmas(&ex.trajectory, &ex.costate, &tol))
        })
        .map_err(err)?;
    Ok(report
        .checks
        .into_iter()
        .map(|c| (c.name.to_string(), c.passed, c.worst))
        .collect())
}

/// Chain-versus-ODE errors: one `(N, mean_sup_error, stderr)` row per size,
/// errors taken over the worst class.
#[pyfunction]
#[pyo3(signature = (params, network, schedule, sizes, replicas=50, seed=42))]
fn compare_abm_ode(
    py: Python<'_>,
    params: &PyModelParams,
    network: &PyNetwork,
    schedule: &PySchedule,
    sizes: Vec<usize>,
    replicas: usize,
    seed: u64,
) -> PyResult<Vec<(usize, f64, f64)>> {
    let x0 = StateVector::fresh(network.inner.len());
    let (p, net, s) = (&params.inner, &network.inner, &schedule.inner);
    let report = py
        .detach(|| abm::compare_abm_ode(net, p, s, &x0, &sizes, replicas, seed, None))
        .map_err(err)?;
    Ok(report
        .rows
        .iter()
        .map(|r| (r.agents, r.mean_max_error, r.max_error_stderr))
        .collect())
}

/// Names of the built-in scenarios.
#[pyfunction]
fn scenarios() -> Vec<&'static str> {
    scenario::SCENARIOS.to_vec()
}

/// Parameters and network of a named scenario or TOML file.
#[pyfunction]
fn load_scenario(name: &str) -> PyResult<(PyModelParams, PyNetwork)> {
    let inst = scenario::resolve(name)
        .and_then(|c| c.build())
        .map_err(err)?;
    Ok((
        PyModelParams { inner: inst.params },
        PyNetwork { inner: inst.net },
    ))
}

/// Runs a scenario and writes its output bundle; returns the summary text.
#[pyfunction]
fn run_scenario(py: Python<'_>, name: &str, out: PathBuf) -> PyResult<String> {
    let cfg = scenario::resolve(name).map_err(err)?;
    let label = std::path::Path::new(name)
        .file_stem()
        .map_or(name.to_string(), |s| s.to_string_lossy().into_owned());
    py.detach(|| scenario::run_scenario(&label, &cfg, &out))
        .map(|r| r.summary)
        .map_err(err)
}

/// Runs the acceptance suite; returns `(passed, report text)`.
#[pyfunction]
#[pyo3(signature = (skip_abm=true, seed=42))]
fn validate(py: Python<'_>, skip_abm: bool, seed: u64) -> PyResult<(bool, String)> {
    let opts = ValidationOptions {
        seed,
        skip_abm,
        ..ValidationOptions::default()
    };
    py.detach(|| validation::validate(&opts))
        .map(|r| (r.passed(), r.to_string()))
        .map_err(err)
}

#[pymodule]
fn incentive(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(py_integrate, m)?)?;
    m.add_function(wrap_pyfunction!(fbs, m)?)?;
    m.add_function(wrap_pyfunction!(switch_opt, m)?)?;
    m.add_function(wrap_pyfunction!(nlp, m)?)?;
    m.add_function(wrap_pyfunction!(lemmas, m)?)?;
    m.add_function(wrap_pyfunction!(compare_abm_ode, m)?)?;
    m.add_function(wrap_pyfunction!(scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(load_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
