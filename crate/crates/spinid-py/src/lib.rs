//! Python bindings: networks, schedules, states, simulation, structural
//! analysis, partner construction, equivalence certification, and
//! known-state fitting.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spinid::dynamics::{self, ControlSchedule, ControlSegment, DensityMatrix};
use spinid::equivalence::{self, ModelStatePair};
use spinid::identify::{self, Dataset, FitOptions, FitResult, ParameterVector};
use spinid::liealg;
use spinid::operators::{Axis, PauliString, SpinNetwork};

fn pyerr(e: spinid::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_axis(s: &str) -> PyResult<Axis> {
    s.parse().map_err(pyerr)
}

/// An n-spin exchange network: gamma per spin, J per coupled pair.
#[pyclass(name = "SpinNetwork", frozen, from_py_object)]
#[derive(Clone)]
struct PyNetwork {
    inner: SpinNetwork,
}

#[pymethods]
impl PyNetwork {
    #[new]
    fn new(n: usize, gamma: Vec<f64>, couplings: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        Ok(Self { inner: SpinNetwork::new(n, gamma, couplings).map_err(pyerr)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n_spins()
    }

    #[getter]
    fn gamma(&self) -> Vec<f64> {
        self.inner.gamma().to_vec()
    }

    #[getter]
    fn couplings(&self) -> Vec<(usize, usize, f64)> {
        self.inner.couplings().map(|((k, l), j)| (k, l, j)).collect()
    }

    fn coupling(&self, k: usize, l: usize) -> f64 {
        self.inner.coupling(k, l)
    }

    /// Controllability / observability report as a dict.
    fn analyze<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let report = liealg::analyze(&self.inner).map_err(pyerr)?;
        let d = PyDict::new(py);
        d.set_item("controllable", report.controllable)?;
        d.set_item("observable", report.observable)?;
        d.set_item("lie_dimension", report.lie_dimension)?;
        d.set_item("observability_dimension", report.observability_dimension)?;
        d.set_item("graph_connected", report.graph_connected)?;
        d.set_item("gamma_distinct", report.gamma_distinct)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "SpinNetwork(n={}, gamma={:?}, couplings={:?})",
            self.inner.n_spins(),
            self.inner.gamma(),
            self.couplings()
        )
    }
}

/// Piecewise-constant control schedule; segments are (dt, ux, uy, uz).
#[pyclass(name = "ControlSchedule", frozen, from_py_object)]
#[derive(Clone)]
struct PySchedule {
    inner: ControlSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    fn new(segments: Vec<(f64, f64, f64, f64)>) -> PyResult<Self> {
        let segs = segments
            .into_iter()
            .map(|(duration, ux, uy, uz)| ControlSegment { duration, ux, uy, uz })
            .collect();
        Ok(Self { inner: ControlSchedule::new(segs).map_err(pyerr)? })
    }

    /// Seeded random schedule; bound 0 gives a drift-only probe.
    #[staticmethod]
    fn random(n_segments: usize, bound: f64, seed: u64) -> Self {
        Self { inner: dynamics::random_schedule(n_segments, bound, seed) }
    }

    #[getter]
    fn segments(&self) -> Vec<(f64, f64, f64, f64)> {
        self.inner
            .segments()
            .iter()
            .map(|s| (s.duration, s.ux, s.uy, s.uz))
            .collect()
    }

    #[getter]
    fn total_duration(&self) -> f64 {
        self.inner.total_duration()
    }

    fn __repr__(&self) -> String {
        format!("ControlSchedule({} segments, T={:.3})", self.inner.segments().len(), self.inner.total_duration())
    }
}

/// Hermitian, unit-trace state of the register.
#[pyclass(name = "DensityMatrix", frozen, from_py_object)]
#[derive(Clone)]
struct PyState {
    inner: DensityMatrix,
}

#[pymethods]
impl PyState {
    /// I / 2^n.
    #[staticmethod]
    fn maximally_mixed(n: usize) -> Self {
        Self { inner: DensityMatrix::maximally_mixed(n) }
    }

    /// Dense matrix of (re, im) entries, row-major.
    #[staticmethod]
    fn from_dense(rows: Vec<Vec<(f64, f64)>>) -> PyResult<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(PyValueError::new_err("matrix must be square"));
        }
        let mut mat = spinid::Operator::zeros(dim, dim);
        for (i, row) in rows.iter().enumerate() {
            for (j, &(re, im)) in row.iter().enumerate() {
                mat[(i, j)] = Complex64::new(re, im);
            }
        }
        Ok(Self { inner: DensityMatrix::new(mat).map_err(pyerr)? })
    }

    /// `I/2^n` plus Pauli-string terms, each `(sites, coeff)` with sites a
    /// list of `(site, axis)` like `[(1, "z")]`.
    #[staticmethod]
    fn from_pauli(n: usize, terms: Vec<(Vec<(usize, String)>, f64)>) -> PyResult<Self> {
        let dim = 1usize << n;
        let mut mat =
            spinid::operators::identity(dim) * Complex64::new(1.0 / dim as f64, 0.0);
        for (sites, coeff) in terms {
            let sites: Vec<(usize, Axis)> = sites
                .into_iter()
                .map(|(k, a)| Ok((k, parse_axis(&a)?)))
                .collect::<PyResult<_>>()?;
            let p = PauliString::new(n, sites).map_err(pyerr)?;
            let realized = p.realize().map_err(pyerr)?;
            mat += realized * Complex64::new(coeff, 0.0);
        }
        Ok(Self { inner: DensityMatrix::new(mat).map_err(pyerr)? })
    }

    fn to_dense(&self) -> Vec<Vec<(f64, f64)>> {
        let m = self.inner.matrix();
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| (m[(i, j)].re, m[(i, j)].im)).collect())
            .collect()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n_spins()
    }

    fn min_eigenvalue(&self) -> f64 {
        self.inner.min_eigenvalue()
    }

    fn is_positive_semidefinite(&self) -> bool {
        self.inner.is_positive_semidefinite()
    }

    fn __repr__(&self) -> String {
        format!("DensityMatrix(n={}, dim={})", self.inner.n_spins(), self.inner.dim())
    }
}

/// (times, Mx, My, Mz) columns.
type TraceColumns = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);
/// A schedule paired with its recorded (Mx, My, Mz) samples.
type TraceRecord = (PySchedule, Vec<f64>, Vec<f64>, Vec<f64>);

/// Magnetization traces (times, Mx, My, Mz) on a uniform grid.
#[pyfunction]
#[pyo3(signature = (network, schedule, state, grid = 0.01))]
fn magnetization_trace(
    network: &PyNetwork,
    schedule: &PySchedule,
    state: &PyState,
    grid: f64,
) -> PyResult<TraceColumns> {
    let trace = dynamics::magnetization_trace(&network.inner, &schedule.inner, &state.inner, grid)
        .map_err(pyerr)?;
    Ok((
        trace.times().to_vec(),
        trace.values(Axis::X).to_vec(),
        trace.values(Axis::Y).to_vec(),
        trace.values(Axis::Z).to_vec(),
    ))
}

/// Sign-flip partner of (network, state): negated couplings, parity-flipped
/// state. Returns (network, state, psd_ok).
#[pyfunction]
fn partner_pair(network: &PyNetwork, state: &PyState) -> PyResult<(PyNetwork, PyState, bool)> {
    let pair = ModelStatePair::new(network.inner.clone(), state.inner.clone()).map_err(pyerr)?;
    let (partner, psd_ok) = equivalence::partner_pair(&pair);
    Ok((
        PyNetwork { inner: partner.network().clone() },
        PyState { inner: partner.initial_state().clone() },
        psd_ok,
    ))
}

/// Compare outputs of two pairs over random schedules; returns a dict with
/// the verdict.
#[pyfunction]
#[pyo3(signature = (network_a, state_a, network_b, state_b, trials = 20, seed = 0, tol = 1e-8))]
#[allow(clippy::too_many_arguments)]
fn equivalence_test<'py>(
    py: Python<'py>,
    network_a: &PyNetwork,
    state_a: &PyState,
    network_b: &PyNetwork,
    state_b: &PyState,
    trials: usize,
    seed: u64,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let a = ModelStatePair::new(network_a.inner.clone(), state_a.inner.clone()).map_err(pyerr)?;
    let b = ModelStatePair::new(network_b.inner.clone(), state_b.inner.clone()).map_err(pyerr)?;
    let verdict = equivalence::equivalence_test(&a, &b, trials, seed, tol).map_err(pyerr)?;
    let d = PyDict::new(py);
    d.set_item("equivalent", verdict.equivalent)?;
    d.set_item("max_deviation", verdict.max_deviation)?;
    d.set_item("trials", verdict.trials)?;
    d.set_item("tolerance", verdict.tolerance)?;
    d.set_item("dimension_mismatch", verdict.dimension_mismatch)?;
    Ok(d)
}

/// Drift-only probe plus seeded random schedules.
#[pyfunction]
fn design_schedules(count: usize, seed: u64) -> Vec<PySchedule> {
    identify::design_schedules(count, seed)
        .into_iter()
        .map(|inner| PySchedule { inner })
        .collect()
}

fn fit_to_dict<'py>(py: Python<'py>, fit: &FitResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let branch = match fit.branch {
        identify::Branch::Known => "known",
        identify::Branch::Primary => "J",
        identify::Branch::Partner => "-J",
    };
    d.set_item("branch", branch)?;
    d.set_item("J", fit.estimate.j().to_vec())?;
    d.set_item("gamma", fit.estimate.gamma().to_vec())?;
    d.set_item("residual", fit.residual)?;
    d.set_item("iterations", fit.iterations)?;
    d.set_item("converged", fit.converged)?;
    d.set_item("warnings", fit.warnings.clone())?;
    Ok(d)
}

/// Least-squares fit of (J, gamma) against recorded traces from a known
/// initial state. `records` pairs each schedule with its (Mx, My, Mz)
/// samples on the given grid.
#[pyfunction]
#[pyo3(signature = (n, edges, grid, records, state, guess_j, guess_gamma, starts = 1, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn fit_known_state<'py>(
    py: Python<'py>,
    n: usize,
    edges: Vec<(usize, usize)>,
    grid: f64,
    records: Vec<TraceRecord>,
    state: &PyState,
    guess_j: Vec<f64>,
    guess_gamma: Vec<f64>,
    starts: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut recs = Vec::with_capacity(records.len());
    for (sched, mx, my, mz) in records {
        let times: Vec<f64> = (0..mx.len()).map(|i| i as f64 * grid).collect();
        let trace = dynamics::Trace::new(times, mx, my, mz).map_err(pyerr)?;
        recs.push((sched.inner, trace));
    }
    let dataset = Dataset::new(n, edges, grid, recs).map_err(pyerr)?;
    let guess = ParameterVector::new(guess_j, guess_gamma);
    let opts = FitOptions { starts, seed, ..FitOptions::default() };
    let fit = identify::fit_known_state(&dataset, &state.inner, &guess, &opts).map_err(pyerr)?;
    fit_to_dict(py, &fit)
}

#[pymodule]
fn spinid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyState>()?;
    m.add_function(wrap_pyfunction!(magnetization_trace, m)?)?;
    m.add_function(wrap_pyfunction!(partner_pair, m)?)?;
    m.add_function(wrap_pyfunction!(equivalence_test, m)?)?;
    m.add_function(wrap_pyfunction!(design_schedules, m)?)?;
    m.add_function(wrap_pyfunction!(fit_known_state, m)?)?;
    Ok(())
}
