//! Python bindings for the dual-continuum homogenization toolkit.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dualhom::cell::CellSolverOptions;
use dualhom::coeffs::{validate, ValidationOptions};
use dualhom::effective::{build_effective_field, EffectiveCoefficients, EffectiveField, MacroSampling, YIndependentCoefficients};
use dualhom::fem::{Scheme, TimeGrid};
use dualhom::finesolve::{solve_fine, FineRunSpec};
use dualhom::macrosolve::{solve_homogenized, MacroOptions, TransientField};
use dualhom::mesh::{MacroMesh, UnitCellGrid};
use dualhom::verify::{fit_rate, run_study, ErrorReport, StudyConfig, NORMS};
use dualhom::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Parse { .. }
        | Error::InvalidData(_)
        | Error::Coercivity(_)
        | Error::Solvability { .. }
        | Error::Resolution(_)
        | Error::Config(_)
        | Error::Incompatible(_)
        | Error::Io { .. }
        | Error::Format(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn scheme(name: &str) -> PyResult<Scheme> {
    name.parse::<Scheme>().map_err(to_py)
}

/// Coefficients, source, initial data and horizon of one problem.
#[pyclass(name = "ProblemData", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyProblemData {
    inner: dualhom::coeffs::ProblemData,
}

#[pymethods]
impl PyProblemData {
    #[new]
    #[pyo3(signature = (dim, kappa1, kappa2, exchange, source = "0", initial1 = "0", initial2 = "0", horizon = 1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        dim: usize,
        kappa1: &str,
        kappa2: &str,
        exchange: &str,
        source: &str,
        initial1: &str,
        initial2: &str,
        horizon: f64,
    ) -> PyResult<Self> {
        let inner = dualhom::coeffs::ProblemData::from_expressions(
            dim,
            [kappa1, kappa2],
            exchange,
            source,
            [initial1, initial2],
            horizon,
        )
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(path: PathBuf) -> PyResult<Self> {
        let inner = dualhom::coeffs::ProblemData::from_file(&path).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    /// `(name, passed, detail)` for every validation check.
    fn validate(&self) -> Vec<(String, bool, String)> {
        validate(&self.inner, &ValidationOptions::default())
            .checks
            .into_iter()
            .map(|c| (c.name, c.passed, c.detail))
            .collect()
    }

    fn swapped(&self) -> Self {
        Self { inner: self.inner.swapped() }
    }

    fn __repr__(&self) -> String {
        format!("ProblemData(dim={}, horizon={})", self.inner.dim, self.inner.horizon)
    }
}

/// Effective coefficients sampled over the macro domain.
#[pyclass(name = "EffectiveField", frozen)]
struct PyEffectiveField {
    inner: EffectiveField,
}

#[pymethods]
impl PyEffectiveField {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: EffectiveField::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __len__(&self) -> usize {
        self.inner.points.len()
    }

    /// Macro sample locations.
    fn points(&self) -> Vec<Vec<f64>> {
        self.inner.points.iter().map(|p| p.macro_point.clone()).collect()
    }

    /// Effective tensor of continuum `k` (0 or 1) interpolated at `x`.
    fn kappa_star(&self, x: Vec<f64>, k: usize) -> PyResult<[[f64; 2]; 2]> {
        check_continuum(k)?;
        Ok(self.inner.at(&x).map_err(to_py)?.kappa_star[k])
    }

    fn convection(&self, x: Vec<f64>, k: usize) -> PyResult<[f64; 2]> {
        check_continuum(k)?;
        Ok(self.inner.at(&x).map_err(to_py)?.convection[k])
    }

    fn drift(&self, x: Vec<f64>, k: usize) -> PyResult<[f64; 2]> {
        check_continuum(k)?;
        Ok(self.inner.at(&x).map_err(to_py)?.drift[k])
    }

    fn beta(&self, x: Vec<f64>) -> PyResult<f64> {
        Ok(self.inner.at(&x).map_err(to_py)?.beta)
    }
}

fn check_continuum(k: usize) -> PyResult<()> {
    if k > 1 {
        return Err(PyValueError::new_err(format!("continuum index must be 0 or 1, got {k}")));
    }
    Ok(())
}

/// Nodal time series of both continua.
#[pyclass(name = "TransientField", frozen)]
struct PyTransientField {
    inner: TransientField,
}

#[pymethods]
impl PyTransientField {
    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: TransientField::decode_binary(bytes).map_err(to_py)? })
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.encode_binary()
    }

    #[getter]
    fn n_levels(&self) -> usize {
        self.inner.n_levels()
    }

    #[getter]
    fn epsilon(&self) -> Option<f64> {
        self.inner.epsilon
    }

    /// Node coordinates, in the order of `values`.
    fn nodes(&self) -> Vec<Vec<f64>> {
        let g = self.inner.grid();
        let d = self.inner.mesh.dim();
        (0..g.n_nodes()).map(|i| g.node_coords(i)[..d].to_vec()).collect()
    }

    /// Nodal values of continuum `k` at time level `level` (default last).
    #[pyo3(signature = (k, level = None))]
    fn values(&self, k: usize, level: Option<usize>) -> PyResult<Vec<f64>> {
        check_continuum(k)?;
        let n = level.unwrap_or(self.inner.n_levels() - 1);
        self.inner.u[k]
            .get(n)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("time level {n} out of range")))
    }

    fn max_abs(&self) -> f64 {
        self.inner.max_abs()
    }

    fn max_difference(&self) -> f64 {
        self.inner.max_difference()
    }

    /// `||u_k||_{L2(0,T;H1_0)}`.
    fn energy_norm(&self, k: usize) -> PyResult<f64> {
        check_continuum(k)?;
        Ok(self.inner.energy_norm(k))
    }
}

/// Fitted rates and per-eps error norms of a convergence study.
#[pyclass(name = "ErrorReport", frozen)]
struct PyErrorReport {
    inner: ErrorReport,
}

#[pymethods]
impl PyErrorReport {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ErrorReport::from_json(text).map_err(to_py)? })
    }

    #[getter]
    fn passed(&self) -> bool {
        self.inner.passed
    }

    #[getter]
    fn flags(&self) -> Vec<String> {
        self.inner.flags.clone()
    }

    #[getter]
    fn eps(&self) -> Vec<f64> {
        self.inner.rows.iter().map(|r| r.epsilon).collect()
    }

    /// Values of one norm column (`l2_u1`, `grad_u2`, `energy_u1`, ...).
    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        if !NORMS.contains(&name) {
            return Err(PyValueError::new_err(format!("unknown norm {name}; expected one of {NORMS:?}")));
        }
        Ok(self.inner.rows.iter().map(|r| r.norm(name)).collect())
    }

    /// Fitted slope of a norm column, or `None` when every error is zero.
    fn slope(&self, name: &str) -> PyResult<Option<f64>> {
        self.inner
            .fits
            .get(name)
            .map(|f| f.slope())
            .ok_or_else(|| PyValueError::new_err(format!("no fit for {name}")))
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }
}

/// Effective coefficients from cell problems on an `n`-per-axis grid.
#[pyfunction]
#[pyo3(signature = (data, cell_n = 64, samples = 4))]
fn effective(py: Python<'_>, data: &PyProblemData, cell_n: usize, samples: usize) -> PyResult<PyEffectiveField> {
    let data = &data.inner;
    let build = py
        .detach(|| {
            let grid = UnitCellGrid::new(data.dim, cell_n)?;
            build_effective_field(data, &MacroSampling::auto(data, samples), &grid, &CellSolverOptions::default())
        })
        .map_err(to_py)?;
    Ok(PyEffectiveField { inner: build.field })
}

/// Solves the homogenized system on a uniform `macro_n` mesh.
#[pyfunction]
#[pyo3(signature = (data, macro_n = 32, steps = 100, scheme = "ie", cell_n = 64))]
fn homogenize(
    py: Python<'_>,
    data: &PyProblemData,
    macro_n: usize,
    steps: usize,
    scheme: &str,
    cell_n: usize,
) -> PyResult<PyTransientField> {
    let data = &data.inner;
    let opts = MacroOptions { scheme: self::scheme(scheme)?, ..Default::default() };
    let field = py
        .detach(|| {
            let mesh = MacroMesh::uniform(data.dim, &data.domain.lower, &data.domain.upper, macro_n)?;
            let time = TimeGrid::new(data.horizon, steps)?;
            if data.is_y_independent() {
                solve_homogenized(&YIndependentCoefficients::new(data)?, data, &mesh, time, &opts)
            } else {
                let grid = UnitCellGrid::new(data.dim, cell_n)?;
                let build = build_effective_field(data, &MacroSampling::auto(data, macro_n), &grid, &CellSolverOptions::default())?;
                solve_homogenized(&build.field, data, &mesh, time, &opts)
            }
        })
        .map_err(to_py)?;
    Ok(PyTransientField { inner: field })
}

/// Solves the resolved two-scale system at one `eps`.
#[pyfunction]
#[pyo3(signature = (data, eps, steps = 100, scheme = "ie", rho = 16.0))]
fn fine(py: Python<'_>, data: &PyProblemData, eps: f64, steps: usize, scheme: &str, rho: f64) -> PyResult<PyTransientField> {
    let data = &data.inner;
    let scheme = self::scheme(scheme)?;
    let field = py
        .detach(|| {
            let spec = FineRunSpec {
                scheme,
                rho,
                ..FineRunSpec::new(eps, TimeGrid::new(data.horizon, steps)?)
            };
            solve_fine(data, &spec)
        })
        .map_err(to_py)?;
    Ok(PyTransientField { inner: field })
}

/// Runs the eps sweep and returns the fitted error report.
#[pyfunction]
#[pyo3(signature = (data, eps = None, rho = 16.0, dt = 1e-3, cell_n = 256, cutoff = false))]
fn study(
    py: Python<'_>,
    data: &PyProblemData,
    eps: Option<Vec<f64>>,
    rho: f64,
    dt: f64,
    cell_n: usize,
    cutoff: bool,
) -> PyResult<PyErrorReport> {
    let mut cfg = StudyConfig { rho, dt, cell_n, ..Default::default() };
    if let Some(eps) = eps {
        cfg.eps = eps;
    }
    cfg.corrector.use_cutoff = cutoff;
    let data = &data.inner;
    let outcome = py.detach(|| run_study(data, &cfg)).map_err(to_py)?;
    Ok(PyErrorReport { inner: outcome.report })
}

/// Least-squares log-log slope of `(eps, error)` pairs.
#[pyfunction]
fn rate(points: Vec<(f64, f64)>) -> PyResult<Option<f64>> {
    Ok(fit_rate(&points).map_err(to_py)?.slope())
}

#[pymodule]
fn dualhom_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblemData>()?;
    m.add_class::<PyEffectiveField>()?;
    m.add_class::<PyTransientField>()?;
    m.add_class::<PyErrorReport>()?;
    m.add_function(wrap_pyfunction!(effective, m)?)?;
    m.add_function(wrap_pyfunction!(homogenize, m)?)?;
    m.add_function(wrap_pyfunction!(fine, m)?)?;
    m.add_function(wrap_pyfunction!(study, m)?)?;
    m.add_function(wrap_pyfunction!(rate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
