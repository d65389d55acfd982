//! Python bindings: plants, projections, detection, estimation and the
//! invariant suites. Signals cross the boundary as lists of per-sample lists.

use std::path::Path;

use hamfd_core::divergence::{detect_sir, detect_skr, DetectionReport};
use hamfd_core::estimation::estimate_uncertainty;
use hamfd_core::factorization::lti_factorization;
use hamfd_core::harness::{
    run_detect_sir, run_detect_skr, run_estimate, run_simulate, run_verify, RunReport, Scenario, Suite, VerifyOptions,
};
use hamfd_core::plants::{lti_model, scalar_cubic_model, scalar_lti_model, PlantModel};
use hamfd_core::projection::{sir_project, skr_project};
use hamfd_core::signals::SignalWindow;
use hamfd_core::systems::LtiSystem;
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: hamfd_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn samples(v: Vec<Vec<f64>>) -> Vec<DVector<f64>> {
    v.into_iter().map(DVector::from_vec).collect()
}

fn lists(v: &[DVector<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|s| s.as_slice().to_vec()).collect()
}

/// A plant together with its normalized factorizations.
#[pyclass(frozen)]
struct Plant {
    model: PlantModel,
}

#[pymethods]
impl Plant {
    /// dx = −x + u, y = x
    #[staticmethod]
    fn scalar_lti() -> Self {
        Plant { model: scalar_lti_model() }
    }

    /// dx = −x − x³ + u, y = x
    #[staticmethod]
    fn scalar_cubic() -> Self {
        Plant { model: scalar_cubic_model() }
    }

    /// Arbitrary LTI plant from row-major matrices.
    #[staticmethod]
    fn lti(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, c: Vec<Vec<f64>>, d: Vec<Vec<f64>>) -> PyResult<Self> {
        let sys = LtiSystem::new(matrix(a)?, matrix(b)?, matrix(c)?, matrix(d)?).map_err(err)?;
        Ok(Plant { model: lti_model("lti", sys).map_err(err)? })
    }

    #[getter]
    fn name(&self) -> String {
        self.model.name.clone()
    }

    #[getter]
    fn n(&self) -> usize {
        self.model.system.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.model.system.p()
    }

    #[getter]
    fn m(&self) -> usize {
        self.model.system.m()
    }

    fn __repr__(&self) -> String {
        format!("Plant({:?}, n={}, p={}, m={})", self.model.name, self.n(), self.p(), self.m())
    }
}

impl Plant {
    fn state(&self, x0: Option<Vec<f64>>) -> PyResult<DVector<f64>> {
        let x = x0.map_or_else(|| DVector::zeros(self.n()), DVector::from_vec);
        if x.len() != self.n() {
            return Err(PyValueError::new_err(format!("initial state has {} entries, plant has {}", x.len(), self.n())));
        }
        Ok(x)
    }
}

fn window(t0: f64, dt: f64, u: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<SignalWindow> {
    SignalWindow::new(t0, dt, samples(u), samples(y)).map_err(err)
}

fn report_dict<'py>(py: Python<'py>, r: &DetectionReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("J", r.j)?;
    d.set_item("J_th", r.j_th)?;
    d.set_item("verdict", r.verdict.to_string())?;
    d.set_item("M", r.m)?;
    d.set_item("half_energy", r.half_energy)?;
    d.set_item("clamped_samples", r.clamped_samples)?;
    d.set_item("divergence_series", r.divergence_series.clone())?;
    Ok(d)
}

/// Project (u, y) onto the plant's image. Returns zhat and the Hamiltonian series.
#[pyfunction]
#[pyo3(signature = (plant, u, y, dt, t0=0.0, x0=None))]
fn project_sir<'py>(
    py: Python<'py>,
    plant: &Plant,
    u: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    dt: f64,
    t0: f64,
    x0: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let w = window(t0, dt, u, y)?;
    let sir = plant.model.sir().map_err(err)?;
    let res = sir_project(&sir, &w, &plant.state(x0)?).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("zhat", lists(&res.zhat))?;
    d.set_item("latent", lists(&res.latent_v))?;
    d.set_item("h", res.h_series)?;
    d.set_item("h_dual", res.hdual_series)?;
    Ok(d)
}

/// Project (u, y) onto the orthogonal complement of the image via the kernel.
#[pyfunction]
#[pyo3(signature = (plant, u, y, dt, t0=0.0, x0=None))]
fn project_skr<'py>(
    py: Python<'py>,
    plant: &Plant,
    u: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    dt: f64,
    t0: f64,
    x0: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let w = window(t0, dt, u, y)?;
    let skr = plant.model.skr().map_err(err)?;
    let res = skr_project(&skr, &w, &plant.state(x0)?).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("zdelta", lists(&res.zdelta))?;
    d.set_item("residual", lists(&res.residual_r))?;
    Ok(d)
}

/// Evaluate one window. `side` is "sir" (level = γ) or "skr" (level = α).
#[pyfunction]
#[pyo3(signature = (plant, u, y, dt, side="sir", level=None, t0=0.0, x0=None))]
#[allow(clippy::too_many_arguments)]
fn detect<'py>(
    py: Python<'py>,
    plant: &Plant,
    u: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    dt: f64,
    side: &str,
    level: Option<f64>,
    t0: f64,
    x0: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let w = window(t0, dt, u, y)?;
    let x0 = plant.state(x0)?;
    let report = match side {
        "sir" => {
            let sir = plant.model.sir().map_err(err)?;
            let res = sir_project(&sir, &w, &x0).map_err(err)?;
            detect_sir(&w, &res.zhat, level.unwrap_or(0.95)).map_err(err)?
        }
        "skr" => {
            let skr = plant.model.skr().map_err(err)?;
            let res = skr_project(&skr, &w, &x0).map_err(err)?;
            detect_skr(&w, &res.zdelta, level.unwrap_or(0.05)).map_err(err)?
        }
        other => return Err(PyValueError::new_err(format!("side must be \"sir\" or \"skr\", got {other:?}"))),
    };
    report_dict(py, &report)
}

/// Least-squares input/output uncertainty that explains the kernel residual.
#[pyfunction]
#[pyo3(signature = (plant, u, y, dt, t0=0.0, x0=None))]
fn estimate<'py>(
    py: Python<'py>,
    plant: &Plant,
    u: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    dt: f64,
    t0: f64,
    x0: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let w = window(t0, dt, u, y)?;
    let skr = plant.model.skr().map_err(err)?;
    let e = estimate_uncertainty(&skr, &w, &plant.state(x0)?).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("zdelta", lists(&e.zdelta))?;
    d.set_item("residual", lists(&e.residual_r))?;
    d.set_item("replay_residual", lists(&e.replay_r))?;
    d.set_item("consistency_defect", e.consistency_defect)?;
    d.set_item("relative_defect", e.relative_defect)?;
    Ok(d)
}

/// Normalized coprime factor data of (A, B, C, D).
#[pyfunction]
fn factorize<'py>(
    py: Python<'py>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let sys = LtiSystem::new(matrix(a)?, matrix(b)?, matrix(c)?, matrix(d)?).map_err(err)?;
    let fac = lti_factorization(&sys).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("X", rows(&fac.riccati_x))?;
    out.set_item("Y", rows(&fac.riccati_y))?;
    out.set_item("F", rows(&fac.f))?;
    out.set_item("L", rows(&fac.l0))?;
    out.set_item("residual_x", fac.residual_x)?;
    out.set_item("residual_y", fac.residual_y)?;
    Ok(out)
}

type CheckRow = (String, f64, f64, bool);

/// Run an invariant suite; returns (passed, [(name, value, tolerance, passed)]).
#[pyfunction]
#[pyo3(signature = (suite="all", corrupt_gradient=None))]
fn verify(suite: &str, corrupt_gradient: Option<f64>) -> PyResult<(bool, Vec<CheckRow>)> {
    let suite: Suite = suite.parse().map_err(err)?;
    let rep = run_verify(suite, &VerifyOptions { corrupt_gradient });
    let checks = rep
        .checks
        .iter()
        .map(|c| (format!("{}/{}", c.suite, c.name), c.value, c.tolerance, c.passed))
        .collect();
    Ok((rep.passed(), checks))
}

/// Run a scenario file like the CLI; returns (exit_status, report as TOML).
#[pyfunction]
fn run_scenario(command: &str, config: &str, out: &str) -> PyResult<(i32, String)> {
    let f: fn(&Scenario, &Path) -> hamfd_core::Result<RunReport> = match command {
        "simulate" => run_simulate,
        "detect-sir" => run_detect_sir,
        "detect-skr" => run_detect_skr,
        "estimate" => run_estimate,
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    };
    let sc = Scenario::load(Path::new(config)).map_err(err)?;
    let report = f(&sc, Path::new(out)).map_err(err)?;
    let text = std::fs::read_to_string(Path::new(out).join("report.txt"))?;
    Ok((report.exit_status(), text))
}

#[pymodule]
fn pyhamfd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Plant>()?;
    m.add_function(wrap_pyfunction!(project_sir, m)?)?;
    m.add_function(wrap_pyfunction!(project_skr, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(factorize, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
