//! Python bindings: parameters, disorder sampling, single-point simulation,
//! sweeps, the fit library and the exact oracle.

use std::path::PathBuf;

use purcell_core::analytics;
use purcell_core::config::Config;
use purcell_core::dynamics::{self, Model};
use purcell_core::fitting::{self, AbscissaUnit, ExperimentalDataset, ModelFunction, Weighting};
use purcell_core::oracle;
use purcell_core::params;
use purcell_core::sweep;
use purcell_core::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Csv { .. } => PyOSError::new_err(e.to_string()),
        Error::StepSizeUnderflow { .. } | Error::TooManySteps { .. } | Error::Truncation { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for purcell_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

/// Converts a serializable value into plain Python objects through JSON.
fn to_python<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_python<T: serde::de::DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_model(name: &str) -> PyResult<Model> {
    name.parse().py()
}

/// Model parameters in units of the cavity damping rate.
///
/// Keyword arguments override the defaults; unknown names raise `ValueError`.
#[pyclass(name = "ModelParams", module = "purcell", from_py_object)]
#[derive(Clone)]
pub struct PyModelParams {
    inner: params::ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        Self { inner: params::ModelParams::default() }.replace(kwargs)
    }

    /// Copy with some fields replaced.
    #[pyo3(signature = (**kwargs))]
    fn replace(&self, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let Some(kwargs) = kwargs else { return Ok(self.clone()) };
        let py = kwargs.py();
        let merged = to_python(py, &self.inner)?;
        let merged = merged.cast::<PyDict>()?;
        merged.update(kwargs.as_mapping())?;
        let inner: params::ModelParams = from_python(merged.as_any())?;
        inner.validate().py()?;
        Ok(Self { inner })
    }

    fn __getattr__<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
        let all = to_python(py, &self.inner)?;
        all.get_item(name).map_err(|_| pyo3::exceptions::PyAttributeError::new_err(name.to_string()))
    }

    #[getter]
    fn flux(&self) -> f64 {
        self.inner.flux()
    }

    fn with_flux(&self, flux: f64) -> Self {
        Self { inner: self.inner.clone().with_flux(flux) }
    }

    fn with_detuning(&self, delta_c: f64) -> Self {
        Self { inner: self.inner.clone().with_detuning(delta_c) }
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelParams(n_ions={}, n_traj={}, flux={}, delta_c={}, master_seed={})",
            self.inner.n_ions,
            self.inner.n_traj,
            self.inner.flux(),
            self.inner.delta_c,
            self.inner.master_seed
        )
    }
}

/// One sampled ensemble: per-ion detunings and couplings.
#[pyclass(name = "DisorderRealization", module = "purcell", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyRealization {
    inner: params::DisorderRealization,
}

#[pymethods]
impl PyRealization {
    #[new]
    fn new(detunings: Vec<f64>, couplings: Vec<f64>) -> PyResult<Self> {
        if detunings.len() != couplings.len() {
            return Err(PyValueError::new_err("detunings and couplings differ in length"));
        }
        let ions = detunings.into_iter().zip(couplings).map(|(delta, g)| params::IonParams { delta, g }).collect();
        Ok(Self { inner: params::DisorderRealization::from_ions(ions) })
    }

    #[getter]
    fn index(&self) -> u64 {
        self.inner.index
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn detunings(&self) -> Vec<f64> {
        self.inner.ions.iter().map(|i| i.delta).collect()
    }

    #[getter]
    fn couplings(&self) -> Vec<f64> {
        self.inner.ions.iter().map(|i| i.g).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Disorder-averaged output flux on the decay grid.
#[pyclass(name = "FluorescenceTrace", module = "purcell", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyTrace {
    inner: dynamics::FluorescenceTrace,
}

#[pymethods]
impl PyTrace {
    #[new]
    #[pyo3(signature = (times, flux, n_traj=1))]
    fn new(times: Vec<f64>, flux: Vec<f64>, n_traj: usize) -> PyResult<Self> {
        if times.len() != flux.len() {
            return Err(PyValueError::new_err("times and flux differ in length"));
        }
        Ok(Self { inner: dynamics::FluorescenceTrace { times, flux, n_traj } })
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn flux(&self) -> Vec<f64> {
        self.inner.flux.clone()
    }

    #[getter]
    fn n_traj(&self) -> usize {
        self.inner.n_traj
    }

    /// Trapezoidal integral over `[t_lo, t_hi]`.
    fn integrate(&self, t_lo: f64, t_hi: f64) -> f64 {
        self.inner.integrate(t_lo, t_hi)
    }

    fn __len__(&self) -> usize {
        self.inner.times.len()
    }
}

#[pyclass(name = "FitResult", module = "purcell", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyFitResult {
    inner: fitting::FitResult,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn model(&self) -> String {
        self.inner.model.clone()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names.clone()
    }

    #[getter]
    fn parameters(&self) -> Vec<f64> {
        self.inner.parameters.clone()
    }

    #[getter]
    fn parameter_errors(&self) -> Option<Vec<f64>> {
        self.inner.parameter_errors.clone()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn ok(&self) -> bool {
        self.inner.ok()
    }

    #[getter]
    fn at_bound(&self) -> Vec<String> {
        self.inner.at_bound.clone()
    }

    #[getter]
    fn residual_norm(&self) -> f64 {
        self.inner.residual_norm
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn message(&self) -> String {
        self.inner.message.clone()
    }

    #[getter]
    fn derived<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner.derived)
    }

    /// Fitted or derived value by name.
    fn __getitem__(&self, name: &str) -> PyResult<f64> {
        self.inner
            .get(name)
            .or_else(|| self.inner.derived(name))
            .ok_or_else(|| pyo3::exceptions::PyKeyError::new_err(name.to_string()))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }

    fn __repr__(&self) -> String {
        let pairs: Vec<String> =
            self.inner.names.iter().zip(&self.inner.parameters).map(|(n, p)| format!("{n}={p:.6e}")).collect();
        format!("FitResult({}, {}, converged={})", self.inner.model, pairs.join(", "), self.inner.converged)
    }
}

fn fit(inner: fitting::FitResult) -> PyFitResult {
    PyFitResult { inner }
}

/// Disorder realizations `0..n_traj` of the parameter set.
#[pyfunction]
fn sample_ensemble(p: &PyModelParams) -> PyResult<Vec<PyRealization>> {
    Ok(params::sample_ensemble(&p.inner).py()?.into_iter().map(|inner| PyRealization { inner }).collect())
}

#[pyfunction]
fn sample_disorder(p: &PyModelParams, index: u64) -> PyResult<PyRealization> {
    Ok(PyRealization { inner: params::sample_disorder(&p.inner, index).py()? })
}

fn state_dict<'py>(py: Python<'py>, s: &dynamics::SystemState) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("a", pyo3::types::PyComplex::from_doubles(py, s.a.re, s.a.im))?;
    let sm = PyList::empty(py);
    for v in &s.s_minus {
        sm.append(pyo3::types::PyComplex::from_doubles(py, v.re, v.im))?;
    }
    d.set_item("s_minus", sm)?;
    d.set_item("s_z", s.s_z.clone())?;
    Ok(d)
}

/// State at the end of the driven phase, as a dict of `a`, `s_minus`, `s_z`.
#[pyfunction]
fn run_pulse<'py>(py: Python<'py>, realization: &PyRealization, p: &PyModelParams) -> PyResult<Bound<'py, PyDict>> {
    let state = py.detach(|| dynamics::run_pulse(&realization.inner, &p.inner)).py()?;
    state_dict(py, &state)
}

/// Self-consistent steady state under continuous drive.
#[pyfunction]
fn steady_state<'py>(py: Python<'py>, realization: &PyRealization, p: &PyModelParams) -> PyResult<Bound<'py, PyDict>> {
    let ss = analytics::steady_state_self_consistent(&realization.inner, &p.inner);
    let d = state_dict(py, &ss.to_state())?;
    d.set_item("converged", ss.converged)?;
    d.set_item("residual", ss.residual)?;
    Ok(d)
}

/// Disorder-averaged decay trace and exponential fit at one grid point.
#[pyfunction]
#[pyo3(signature = (p, flux, detuning, model="full", realizations=None))]
fn run_point(
    py: Python<'_>,
    p: &PyModelParams,
    flux: f64,
    detuning: f64,
    model: &str,
    realizations: Option<Vec<PyRealization>>,
) -> PyResult<(PyTrace, PyFitResult)> {
    let model = parse_model(model)?;
    let realizations: Vec<params::DisorderRealization> = match realizations {
        Some(rs) => rs.into_iter().map(|r| r.inner).collect(),
        None => params::sample_ensemble(&p.inner).py()?,
    };
    let base = p.inner.clone();
    let (trace, result) = py.detach(|| sweep::run_point(&base, flux, detuning, model, &realizations)).py()?;
    Ok((PyTrace { inner: trace }, fit(result)))
}

fn load_config(config: Option<PathBuf>, overrides: Vec<String>) -> PyResult<Config> {
    let mut c = match config {
        Some(path) => Config::load(&path).py()?,
        None => Config::default(),
    };
    c.apply_overrides(&overrides).py()?;
    Ok(c)
}

/// Runs the configured sweep; with `out` the run directory is written too.
/// Returns the per-point and per-flux tables as plain Python objects.
#[pyfunction]
#[pyo3(signature = (config=None, overrides=Vec::new(), out=None))]
fn run_sweep<'py>(
    py: Python<'py>,
    config: Option<PathBuf>,
    overrides: Vec<String>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let plan = load_config(config, overrides)?.sweep_plan();
    let result = py
        .detach(|| -> purcell_core::Result<_> {
            let result = sweep::run_detuning_sweep(&plan)?;
            if let Some(dir) = &out {
                sweep::persist_run(&result, dir)?;
            }
            Ok(result)
        })
        .py()?;
    let d = PyDict::new(py);
    d.set_item("points", to_python(py, &result.points)?)?;
    d.set_item("rows", to_python(py, &result.rows)?)?;
    d.set_item("phi_0", result.phi_0())?;
    d.set_item("invariants", to_python(py, &result.invariants)?)?;
    d.set_item("realization_seeds", result.realization_seeds.clone())?;
    let comparison = sweep::compare_models(&result, result.phi_0()).ok();
    d.set_item("comparison", to_python(py, &comparison)?)?;
    Ok(d)
}

/// Integrated resonant fluorescence versus flux with its saturation fit.
#[pyfunction]
fn run_saturation_curve<'py>(py: Python<'py>, p: &PyModelParams, fluxes: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let base = p.inner.clone();
    let curve = py
        .detach(|| -> purcell_core::Result<_> {
            let realizations = params::sample_ensemble(&base)?;
            sweep::run_saturation_curve(&base, &fluxes, &realizations)
        })
        .py()?;
    to_python(py, &curve)
}

#[pyfunction]
fn cooperativities<'py>(py: Python<'py>, p: &PyModelParams, n_eff: usize) -> PyResult<Bound<'py, PyAny>> {
    to_python(py, &analytics::cooperativities(&p.inner, n_eff))
}

/// Fits one of the named model forms; `initial` overrides the built-in guess.
#[pyfunction]
#[pyo3(signature = (model, x, y, initial=None))]
fn fit_model(model: &str, x: Vec<f64>, y: Vec<f64>, initial: Option<Vec<f64>>) -> PyResult<PyFitResult> {
    let model = ModelFunction::parse(model).py()?;
    Ok(fit(fitting::fit_model(model, &x, &y, initial.as_deref(), &fitting::FitOptions::default()).py()?))
}

#[pyfunction]
fn fit_exponential(trace: &PyTrace, t_lo: f64, t_hi: f64) -> PyResult<PyFitResult> {
    Ok(fit(fitting::fit_exponential(&trace.inner, (t_lo, t_hi)).py()?))
}

/// Stretched exponential plus background on a histogram with times in ns.
#[pyfunction]
#[pyo3(signature = (times_ns, counts, gamma_0=None, weighting="uniform"))]
fn fit_stretched_composite(
    times_ns: Vec<f64>,
    counts: Vec<f64>,
    gamma_0: Option<f64>,
    weighting: &str,
) -> PyResult<PyFitResult> {
    let weighting: Weighting =
        serde_json::from_value(serde_json::Value::String(weighting.to_string())).map_err(|_| {
            PyValueError::new_err(format!("unknown weighting `{weighting}`; expected uniform, poisson or relative"))
        })?;
    let data = ExperimentalDataset::new(times_ns, AbscissaUnit::Nanoseconds, counts, gamma_0).py()?;
    Ok(fit(fitting::fit_stretched_composite(&data, weighting).py()?))
}

#[pyfunction]
fn fit_lorentzian_single(detunings: Vec<f64>, rates: Vec<f64>) -> PyResult<PyFitResult> {
    Ok(fit(fitting::fit_lorentzian_single(&detunings, &rates).py()?))
}

#[pyfunction]
fn fit_double_lorentzian(detunings: Vec<f64>, rates: Vec<f64>) -> PyResult<PyFitResult> {
    Ok(fit(fitting::fit_double_lorentzian(&detunings, &rates).py()?))
}

#[pyfunction]
fn fit_ple_saturation(fluxes: Vec<f64>, intensities: Vec<f64>) -> PyResult<PyFitResult> {
    Ok(fit(fitting::fit_ple_saturation(&fluxes, &intensities).py()?))
}

/// Exact master equation versus mean field during the driven phase.
#[pyfunction]
#[pyo3(signature = (p, realization, fock_cutoff=8, t_end=None, samples=201))]
fn oracle_compare<'py>(
    py: Python<'py>,
    p: &PyModelParams,
    realization: &PyRealization,
    fock_cutoff: usize,
    t_end: Option<f64>,
    samples: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let t_end = t_end.unwrap_or(p.inner.t_pulse);
    let grid = sweep::linspace(0.0, t_end, samples.max(2));
    let cmp =
        py.detach(|| oracle::compare_with_mean_field(&p.inner, &realization.inner, fock_cutoff, t_end, &grid)).py()?;
    let d = PyDict::new(py);
    d.set_item("times", cmp.times.clone())?;
    d.set_item("s_z_exact", cmp.exact.s_z.clone())?;
    d.set_item("s_z_mean_field", cmp.mean_field_s_z.clone())?;
    d.set_item("abs_a_exact", cmp.exact.a.iter().map(|a| a.norm()).collect::<Vec<_>>())?;
    d.set_item("abs_a_mean_field", cmp.mean_field_a.iter().map(|a| a.norm()).collect::<Vec<_>>())?;
    d.set_item("max_rel_dev_s_z", cmp.max_dev_s_z)?;
    d.set_item("max_rel_dev_abs_a", cmp.max_dev_a)?;
    d.set_item("max_trace_error", cmp.max_trace_error)?;
    Ok(d)
}

#[pymodule]
fn purcell(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyRealization>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(sample_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(sample_disorder, m)?)?;
    m.add_function(wrap_pyfunction!(run_pulse, m)?)?;
    m.add_function(wrap_pyfunction!(steady_state, m)?)?;
    m.add_function(wrap_pyfunction!(run_point, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_saturation_curve, m)?)?;
    m.add_function(wrap_pyfunction!(cooperativities, m)?)?;
    m.add_function(wrap_pyfunction!(fit_model, m)?)?;
    m.add_function(wrap_pyfunction!(fit_exponential, m)?)?;
    m.add_function(wrap_pyfunction!(fit_stretched_composite, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lorentzian_single, m)?)?;
    m.add_function(wrap_pyfunction!(fit_double_lorentzian, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ple_saturation, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_compare, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
