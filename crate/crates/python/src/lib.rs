//! Python bindings: kernels, Fourier evaluation, BRW curves, Monte Carlo
//! ensembles, critical-point search, diagram quadratures and fits.

use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lrperc::analysis::fit_stable_constant;
use lrperc::brw::brw_ratio_curve;
use lrperc::diagrams::{self, DhatModel, DiagramValue, QuadratureSpec};
use lrperc::percolation::{self, Mode, PcSearch, RatioEstimate, SimConfig, WaveSchedule};
use lrperc::rng::{domain, stream};
use lrperc::{Error, KernelSpec, KernelTable, Profile, StepKernel, ValphaEstimate, WaveVector};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput { .. } | Error::Config(_) => PyValueError::new_err(e.to_string()),
        Error::Numeric(_) | Error::ResourceCap(_) => PyRuntimeError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
    }
}

fn parse_profile(s: &str) -> PyResult<Profile> {
    match s {
        "linfty" => Ok(Profile::Linfty),
        "euclidean" => Ok(Profile::Euclidean),
        _ => Err(PyValueError::new_err(format!("unknown profile {s:?}; use 'linfty' or 'euclidean'"))),
    }
}

fn parse_mode(s: &str) -> PyResult<Mode> {
    match s {
        "percolation" => Ok(Mode::Percolation),
        "branching" => Ok(Mode::Branching),
        _ => Err(PyValueError::new_err(format!("unknown mode {s:?}; use 'percolation' or 'branching'"))),
    }
}

fn site(x: &[i64], d: usize) -> PyResult<lrperc::Site> {
    if x.len() != d {
        return Err(PyValueError::new_err(format!("site must have {d} coordinates")));
    }
    let mut s = [0i128; 4];
    for (c, v) in s.iter_mut().zip(x) {
        *c = *v as i128;
    }
    Ok(s)
}

/// Step distribution `D(x) = h(x / L) / W` with tail `|x|^{-d-alpha}`.
#[pyclass(name = "Kernel", module = "pylrperc", frozen)]
struct PyKernel {
    table: Arc<KernelTable>,
}

#[pymethods]
impl PyKernel {
    #[new]
    #[pyo3(signature = (d, alpha, spread, profile = "linfty", core_radius = 0))]
    fn new(py: Python<'_>, d: usize, alpha: f64, spread: f64, profile: &str, core_radius: u64) -> PyResult<Self> {
        let spec = KernelSpec::new(d, alpha, spread, parse_profile(profile)?).with_core_radius(core_radius);
        let table = py.detach(|| KernelTable::build(&spec)).map_err(py_err)?;
        Ok(PyKernel { table: Arc::new(table) })
    }

    #[getter]
    fn d(&self) -> usize {
        self.table.spec().d
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.table.spec().alpha
    }

    #[getter]
    fn spread(&self) -> f64 {
        self.table.spec().spread
    }

    #[getter]
    fn normalization(&self) -> f64 {
        self.table.normalization()
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.table.lambda()
    }

    /// Sites with `|x|_inf <= core_radius` are tabulated exactly.
    #[getter]
    fn core_radius(&self) -> u64 {
        self.table.core_radius()
    }

    /// Mass outside the core box.
    #[getter]
    fn tail_mass(&self) -> f64 {
        self.table.tail_mass()
    }

    #[getter]
    fn dmax(&self) -> f64 {
        self.table.dmax()
    }

    /// `D(x)` for an integer site.
    fn prob(&self, x: Vec<i64>) -> PyResult<f64> {
        Ok(self.table.prob(&site(&x, self.d())?))
    }

    /// `(D^(k), error bound)`.
    fn dhat(&self, k: Vec<f64>) -> PyResult<(f64, f64)> {
        let e = self.table.eval_dhat(&WaveVector::new(k).map_err(py_err)?);
        Ok((e.value, e.err))
    }

    /// `(1 - D^(k), error bound)`, accurate for small `|k|`.
    fn one_minus_dhat(&self, k: Vec<f64>) -> PyResult<(f64, f64)> {
        let e = self.table.one_minus_dhat(&WaveVector::new(k).map_err(py_err)?);
        Ok((e.value, e.err))
    }

    /// Analytic `v_alpha` along the first axis (l-infinity profile, alpha < 2).
    fn axis_valpha(&self) -> PyResult<f64> {
        self.table.axis_valpha().map(|v| v.v_alpha).map_err(py_err)
    }

    fn estimate_valpha(&self, direction: Vec<f64>, t_grid: Vec<f64>) -> PyResult<f64> {
        self.table.estimate_valpha(&direction, &t_grid).map(|v| v.v_alpha).map_err(py_err)
    }

    /// `n` independent steps from stream `(seed, index)`.
    #[pyo3(signature = (n, seed, index = 0))]
    fn sample(&self, n: usize, seed: u64, index: u64) -> Vec<Vec<i64>> {
        let d = self.d();
        let mut rng = stream(seed, domain::TEST, index);
        (0..n).map(|_| self.table.sample_step(&mut rng)[..d].iter().map(|c| *c as i64).collect()).collect()
    }

    fn __repr__(&self) -> String {
        let s = self.table.spec();
        format!("Kernel(d={}, alpha={}, spread={}, profile={:?})", s.d, s.alpha, s.spread, s.profile)
    }
}

fn valpha_for(k: &PyKernel, v_alpha: Option<f64>) -> PyResult<ValphaEstimate> {
    match v_alpha {
        Some(v) => {
            let mut dir = vec![0.0; k.d()];
            dir[0] = 1.0;
            Ok(ValphaEstimate { v_alpha: v, direction: dir, fit_window: vec![], residual: 0.0 })
        }
        None => k.table.axis_valpha().map_err(py_err),
    }
}

/// `D^(k_n)^n` on a grid: list over `n_grid` of lists over `k_mags`.
#[pyfunction]
#[pyo3(signature = (kernel, k_mags, n_grid, v_alpha = None))]
fn brw_ratios(kernel: &PyKernel, k_mags: Vec<f64>, n_grid: Vec<u64>, v_alpha: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    let v = valpha_for(kernel, v_alpha)?;
    let c = brw_ratio_curve(&kernel.table, &v, kernel.alpha(), &k_mags, &n_grid).map_err(py_err)?;
    Ok(c.ratios)
}

/// Per-batch sums of a Monte Carlo ensemble.
#[pyclass(name = "Ensemble", module = "pylrperc", frozen)]
struct PyEnsemble {
    inner: percolation::Ensemble,
    alpha: f64,
}

#[pymethods]
impl PyEnsemble {
    #[getter]
    fn runs(&self) -> u64 {
        self.inner.runs
    }

    #[getter]
    fn capped(&self) -> u64 {
        self.inner.capped
    }

    #[getter]
    fn alive(&self) -> Vec<u64> {
        self.inner.alive.clone()
    }

    /// `(E[N_n], stderr)`.
    fn mean_count(&self, n: u64) -> PyResult<(f64, f64)> {
        self.inner.mean_count(n).map_err(py_err)
    }

    /// `(Z(k_j(n); n) / Z(0; n), stderr)`.
    fn two_point_ratio(&self, j: usize, n: u64) -> PyResult<(f64, f64)> {
        let r = percolation::estimate_two_point_ratio(&self.inner, j, n).map_err(py_err)?;
        Ok((r.value, r.stderr))
    }

    /// `(xi_r(n), stderr)` for the `i`-th moment order.
    fn gyration(&self, i: usize, n: u64) -> PyResult<(f64, f64)> {
        let g = percolation::estimate_gyration(&self.inner, i, n, self.alpha).map_err(py_err)?;
        Ok((g.xi, g.stderr))
    }

    /// `(m_hat, stderr)` from the log-count slope on `[n1, n2]`.
    fn growth(&self, n1: u64, n2: u64) -> PyResult<(f64, f64)> {
        let g = percolation::estimate_growth(&self.inner, n1, n2).map_err(py_err)?;
        Ok((g.m_hat, g.stderr))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Simulate `runs` clusters; results do not depend on the thread count.
#[pyfunction]
#[pyo3(signature = (kernel, p, n_max, runs, seed, k_mags = vec![], r_values = vec![], mode = "percolation", v_alpha = None))]
#[allow(clippy::too_many_arguments)]
fn run_ensemble(
    py: Python<'_>,
    kernel: &PyKernel,
    p: f64,
    n_max: u64,
    runs: u64,
    seed: u64,
    k_mags: Vec<f64>,
    r_values: Vec<f64>,
    mode: &str,
    v_alpha: Option<f64>,
) -> PyResult<PyEnsemble> {
    let mut cfg = SimConfig::new(p, n_max, parse_mode(mode)?);
    if !k_mags.is_empty() {
        let v = valpha_for(kernel, v_alpha)?;
        cfg.waves = WaveSchedule::scaled(&k_mags, &v, kernel.alpha(), n_max).map_err(py_err)?;
    }
    cfg.r_values = r_values;
    let table = kernel.table.clone();
    let inner = py.detach(|| percolation::run_ensemble(&cfg, table.as_ref(), seed, runs)).map_err(py_err)?;
    Ok(PyEnsemble { inner, alpha: kernel.alpha() })
}

/// Bisection for the critical point; returns `{p_lo, p_hi, width}`.
#[pyfunction]
#[pyo3(signature = (kernel, seed, mode = "percolation", p_lo = 0.5, p_hi = 1.5, target_width = 0.02, n_max = 128, runs = 2000))]
#[allow(clippy::too_many_arguments)]
fn estimate_pc<'py>(
    py: Python<'py>,
    kernel: &PyKernel,
    seed: u64,
    mode: &str,
    p_lo: f64,
    p_hi: f64,
    target_width: f64,
    n_max: u64,
    runs: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let search = PcSearch { p_lo, p_hi, target_width, n_max, runs, ..PcSearch::default() };
    let mode = parse_mode(mode)?;
    let table = kernel.table.clone();
    let b = py.detach(|| percolation::estimate_pc(table.as_ref(), mode, &search, seed)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("p_lo", b.p_lo)?;
    out.set_item("p_hi", b.p_hi)?;
    out.set_item("width", b.width)?;
    Ok(out)
}

/// Weighted fit of `-ln ratio = C k^{alpha ^ 2} + b` at each n; points are
/// `(n, k_mag, ratio, stderr)`. Returns `{c_hat, stderr, intercept, intercept_stderr}`.
#[pyfunction]
fn fit_constant<'py>(py: Python<'py>, points: Vec<(u64, f64, f64, f64)>, alpha: f64) -> PyResult<Bound<'py, PyDict>> {
    let pts: Vec<RatioEstimate> =
        points.into_iter().map(|(n, k_mag, value, stderr)| RatioEstimate { value, stderr, n, k_mag }).collect();
    let f = fit_stable_constant(&pts, alpha).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("c_hat", f.c_hat)?;
    out.set_item("stderr", f.stderr)?;
    out.set_item("intercept", f.intercept)?;
    out.set_item("intercept_stderr", f.intercept_stderr)?;
    Ok(out)
}

/// `int_0^inf (1 - cos t) t^{-1-delta} dt`.
#[pyfunction]
fn kdelta(delta: f64) -> PyResult<f64> {
    diagrams::kdelta(delta).map_err(py_err)
}

/// Relative error of the fractional-moment identity at `(a, delta)`.
#[pyfunction]
fn frac_moment_check(a: f64, delta: f64) -> PyResult<f64> {
    diagrams::frac_moment_check(a, delta).map_err(py_err)
}

fn diagram_dict<'py>(py: Python<'py>, v: DiagramValue) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("value", v.value)?;
    out.set_item("half_width", v.half_width)?;
    out.set_item("level_values", v.level_values)?;
    out.set_item("diverging", v.diverging)?;
    Ok(out)
}

fn model(alpha: f64, d: usize, kernel: Option<&PyKernel>) -> DhatModel {
    match kernel {
        Some(k) => DhatModel::Exact(k.table.clone()),
        None => DhatModel::surrogate(alpha, d),
    }
}

/// `J(u e1)`; surrogate model unless `kernel` is given.
#[pyfunction]
#[pyo3(signature = (u, alpha, d, nodes_per_level = 1 << 16, levels = 4, seed = 0, kernel = None))]
#[allow(clippy::too_many_arguments)]
fn jhat<'py>(
    py: Python<'py>,
    u: f64,
    alpha: f64,
    d: usize,
    nodes_per_level: usize,
    levels: usize,
    seed: u64,
    kernel: Option<&PyKernel>,
) -> PyResult<Bound<'py, PyDict>> {
    let m = model(alpha, d, kernel);
    let spec = QuadratureSpec::new(m.dim(), nodes_per_level, levels, seed);
    let v = py.detach(|| diagrams::jhat(u, &m, &spec)).map_err(py_err)?;
    diagram_dict(py, v)
}

/// Triangle proxy `int (1 - D^)^{-3}`; flags divergence when `d <= 3 (alpha ^ 2)`.
#[pyfunction]
#[pyo3(signature = (alpha, d, nodes_per_level = 1 << 16, levels = 4, seed = 0, kernel = None))]
fn triangle<'py>(
    py: Python<'py>,
    alpha: f64,
    d: usize,
    nodes_per_level: usize,
    levels: usize,
    seed: u64,
    kernel: Option<&PyKernel>,
) -> PyResult<Bound<'py, PyDict>> {
    let m = model(alpha, d, kernel);
    let spec = QuadratureSpec::new(m.dim(), nodes_per_level, levels, seed);
    let v = py.detach(|| diagrams::triangle_proxy(&m, &spec)).map_err(py_err)?;
    diagram_dict(py, v)
}

/// Shifted moment `int_0^1 v^{-1-delta2} (1 - D^(v e1)) J(|v - u|)^{1/2} dv`.
#[pyfunction]
#[pyo3(signature = (u, delta2, alpha, d, nodes_per_level = 1 << 14, levels = 4, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn shifted_j_moment<'py>(
    py: Python<'py>,
    u: f64,
    delta2: f64,
    alpha: f64,
    d: usize,
    nodes_per_level: usize,
    levels: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let m = DhatModel::surrogate(alpha, d);
    let spec = QuadratureSpec::new(d, nodes_per_level, levels, seed);
    let v = py.detach(|| diagrams::shifted_j_moment(u, delta2, &m, &spec)).map_err(py_err)?;
    diagram_dict(py, v)
}

/// Runs the command-line driver with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("lrperc".to_string()).chain(args).collect();
    py.detach(|| lrperc::cli::main_with_args(argv))
}

#[pymodule]
pub fn pylrperc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(brw_ratios, m)?)?;
    m.add_function(wrap_pyfunction!(run_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_pc, m)?)?;
    m.add_function(wrap_pyfunction!(fit_constant, m)?)?;
    m.add_function(wrap_pyfunction!(kdelta, m)?)?;
    m.add_function(wrap_pyfunction!(frac_moment_check, m)?)?;
    m.add_function(wrap_pyfunction!(jhat, m)?)?;
    m.add_function(wrap_pyfunction!(triangle, m)?)?;
    m.add_function(wrap_pyfunction!(shifted_j_moment, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("RNG_ALGORITHM", lrperc::rng::RNG_ALGORITHM)?;
    Ok(())
}
