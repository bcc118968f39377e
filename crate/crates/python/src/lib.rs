//! Python bindings: spaces, density operators, the moment solver, time
//! evolution and the verification suite.

use nalgebra::DMatrix;
use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qlbgk::io::{state_from_str, state_to_string};
use qlbgk::moment::MomentSolver;
use qlbgk::state::relative_entropy;
use qlbgk::{
    convergence_experiment, evolve, gibbs_from_mass, gibbs_plus_coherence, maxwellian_from_potential,
    run_suite, DensityField, DensityOperator, EvolutionConfig, HermitianOperator, Potential, Scheme,
    SolveOptions, SpectralSpace,
};

create_exception!(pyqlbgk, QlbgkError, PyException);

fn err(e: qlbgk::Error) -> PyErr {
    QlbgkError::new_err(e.to_string())
}

/// Truncated plane-wave basis `p = -M..M` with a uniform grid of `Nx` points.
#[pyclass(name = "Space", frozen)]
#[derive(Clone, Copy)]
struct PySpace {
    inner: SpectralSpace,
}

#[pymethods]
impl PySpace {
    #[new]
    #[pyo3(signature = (modes, temperature, grid = None))]
    fn new(modes: usize, temperature: f64, grid: Option<usize>) -> PyResult<Self> {
        let inner = match grid {
            Some(g) => SpectralSpace::with_grid(modes, g, temperature),
            None => SpectralSpace::new(modes, temperature),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn modes(&self) -> usize {
        self.inner.modes()
    }

    #[getter]
    fn grid(&self) -> usize {
        self.inner.grid()
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn grid_points(&self) -> Vec<f64> {
        self.inner.grid_points()
    }

    fn partition_function(&self) -> f64 {
        self.inner.partition_function()
    }

    fn __repr__(&self) -> String {
        format!(
            "Space(modes={}, temperature={}, grid={})",
            self.inner.modes(),
            self.inner.temperature(),
            self.inner.grid()
        )
    }
}

#[pyclass(name = "DensityOperator", frozen)]
#[derive(Clone)]
struct PyDensityOperator {
    inner: DensityOperator,
}

#[pymethods]
impl PyDensityOperator {
    /// Builds a state from a square nested list of complex entries in mode order.
    #[staticmethod]
    fn from_matrix(space: &PySpace, matrix: Vec<Vec<Complex64>>) -> PyResult<Self> {
        let n = space.inner.dim();
        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err(format!("matrix must be {n}×{n}")));
        }
        let m = DMatrix::from_fn(n, n, |i, j| matrix[i][j]);
        let op = HermitianOperator::new(space.inner, m).map_err(err)?;
        Ok(Self { inner: DensityOperator::new(op).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let (_, op) = state_from_str(text).map_err(QlbgkError::new_err)?;
        Ok(Self { inner: DensityOperator::new(op).map_err(err)? })
    }

    fn to_json(&self) -> String {
        state_to_string(self.inner.op())
    }

    #[getter]
    fn space(&self) -> PySpace {
        PySpace { inner: self.inner.space() }
    }

    fn matrix(&self) -> Vec<Vec<Complex64>> {
        let m = self.inner.matrix();
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
    }

    /// Eigenvalues in descending order.
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn trace(&self) -> f64 {
        self.inner.trace()
    }

    fn local_density(&self) -> Vec<f64> {
        self.inner.local_density().into_values()
    }

    fn kinetic_energy(&self) -> f64 {
        self.inner.kinetic_energy()
    }

    /// `Tr(ϱ log ϱ - ϱ)`.
    fn entropy(&self) -> f64 {
        self.inner.entropy()
    }

    fn free_energy(&self) -> f64 {
        self.inner.free_energy()
    }

    fn distance_j1(&self, other: &PyDensityOperator) -> PyResult<f64> {
        self.inner.distance_j1(&other.inner).map_err(err)
    }

    fn distance_j2(&self, other: &PyDensityOperator) -> f64 {
        self.inner.distance_j2(&other.inner)
    }

    fn relative_entropy(&self, other: &PyDensityOperator) -> PyResult<f64> {
        relative_entropy(&self.inner, &other.inner).map_err(err)
    }

    fn norms<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.norms();
        let d = PyDict::new(py);
        d.set_item("trace_norm", r.trace_norm)?;
        d.set_item("hs_norm", r.hs_norm)?;
        d.set_item("e_norm", r.e_norm)?;
        d.set_item("h_norm", r.h_norm)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("DensityOperator(dim={}, trace={})", self.inner.space().dim(), self.inner.trace())
    }
}

#[pyclass(name = "MomentSolution", frozen)]
struct PyMomentSolution {
    #[pyo3(get)]
    potential: Vec<f64>,
    #[pyo3(get)]
    maxwellian: PyDensityOperator,
    #[pyo3(get)]
    residual: f64,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    dual_value: f64,
    #[pyo3(get)]
    converged: bool,
}

/// Solves `n[exp(-(H+A)/T)] = n` for the potential `A` given grid values of `n`.
#[pyfunction]
#[pyo3(signature = (space, density, tol_inf = 1e-10, max_iter = 100))]
fn solve_moment(space: &PySpace, density: Vec<f64>, tol_inf: f64, max_iter: usize) -> PyResult<PyMomentSolution> {
    let n = DensityField::new(space.inner, density).map_err(err)?;
    let opts = SolveOptions { tol_inf, max_iter, ..SolveOptions::default() };
    let sol = MomentSolver::new(space.inner, opts).solve(&n).map_err(err)?;
    Ok(PyMomentSolution {
        potential: sol.potential.values().to_vec(),
        maxwellian: PyDensityOperator { inner: sol.maxwellian },
        residual: sol.residual,
        iterations: sol.iterations,
        dual_value: sol.dual_value,
        converged: sol.converged,
    })
}

/// `exp(-(H+A)/T)` for grid values of a real potential.
#[pyfunction]
fn maxwellian(space: &PySpace, potential: Vec<f64>) -> PyResult<PyDensityOperator> {
    let a = Potential::new(space.inner, potential).map_err(err)?;
    Ok(PyDensityOperator { inner: maxwellian_from_potential(&a).map_err(err)? })
}

/// Gibbs state of mass `mass`, optionally carrying a coherence between two modes.
#[pyfunction]
#[pyo3(signature = (space, mass = 1.0, coherence = 0.0, modes = (0, 1)))]
fn gibbs(space: &PySpace, mass: f64, coherence: f64, modes: (i64, i64)) -> PyResult<PyDensityOperator> {
    let inner = if coherence == 0.0 {
        gibbs_from_mass(mass, space.inner).map_err(err)?.state
    } else {
        gibbs_plus_coherence(mass, space.inner, coherence, modes).map_err(err)?
    };
    Ok(PyDensityOperator { inner })
}

#[pyclass(name = "Trajectory", frozen)]
struct PyTrajectory {
    #[pyo3(get)]
    final_state: PyDensityOperator,
    #[pyo3(get)]
    snapshots: Vec<(f64, PyDensityOperator)>,
    #[pyo3(get)]
    picard_distances: Vec<f64>,
    columns: Vec<(&'static str, Vec<f64>)>,
    #[pyo3(get)]
    verdict: Option<Py<PyDict>>,
}

#[pymethods]
impl PyTrajectory {
    /// Diagnostics as a dict of equally long columns.
    fn columns<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in &self.columns {
            d.set_item(*k, v.clone())?;
        }
        Ok(d)
    }
}

fn trajectory(traj: qlbgk::Trajectory, verdict: Option<Py<PyDict>>) -> PyTrajectory {
    let rows = &traj.rows;
    let col = |f: fn(&qlbgk::evolution::StepDiagnostics) -> f64| rows.iter().map(f).collect();
    let columns = vec![
        ("t", col(|r| r.t)),
        ("trace", col(|r| r.trace)),
        ("free_energy", col(|r| r.free_energy)),
        ("entropy_production", col(|r| r.entropy_production)),
        ("min_density", col(|r| r.min_density)),
        ("dist_J1_gibbs", col(|r| r.dist_j1_gibbs)),
        ("dist_J2_gibbs", col(|r| r.dist_j2_gibbs)),
        ("relative_entropy_gibbs", col(|r| r.relative_entropy_gibbs)),
        ("solver_iters", col(|r| r.solver_iters as f64)),
        ("solver_residual", col(|r| r.solver_residual)),
    ];
    PyTrajectory {
        final_state: PyDensityOperator { inner: traj.final_state },
        snapshots: traj
            .snapshots
            .into_iter()
            .map(|(t, s)| (t, PyDensityOperator { inner: s }))
            .collect(),
        picard_distances: traj.picard_distances,
        columns,
        verdict,
    }
}

fn evolution_config(tau: f64, dt: f64, t_end: f64, scheme: &str, snapshot_stride: usize) -> PyResult<EvolutionConfig> {
    let scheme = match scheme {
        "exponential_integrator" => Scheme::ExponentialIntegrator,
        "picard" => Scheme::Picard,
        other => return Err(PyValueError::new_err(format!("unknown scheme {other:?}"))),
    };
    Ok(EvolutionConfig { tau, dt, t_end, scheme, snapshot_stride, ..EvolutionConfig::default() })
}

/// Integrates the BGK equation from `rho0`.
#[pyfunction(name = "evolve")]
#[pyo3(signature = (rho0, tau = 1.0, dt = 0.01, t_end = 1.0, scheme = "exponential_integrator", snapshot_stride = 0))]
fn py_evolve(
    rho0: &PyDensityOperator,
    tau: f64,
    dt: f64,
    t_end: f64,
    scheme: &str,
    snapshot_stride: usize,
) -> PyResult<PyTrajectory> {
    let cfg = evolution_config(tau, dt, t_end, scheme, snapshot_stride)?;
    Ok(trajectory(evolve(&rho0.inner, &cfg).map_err(err)?, None))
}

/// Evolves toward the Gibbs state of equal mass; the verdict is attached to the trajectory.
#[pyfunction]
#[pyo3(signature = (rho0, tau = 1.0, dt = 0.01, t_end = 20.0, target = 1e-4))]
fn equilibrium(py: Python<'_>, rho0: &PyDensityOperator, tau: f64, dt: f64, t_end: f64, target: f64) -> PyResult<PyTrajectory> {
    let cfg = evolution_config(tau, dt, t_end, "exponential_integrator", 0)?;
    let (traj, v) = convergence_experiment(&rho0.inner, &cfg, target).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("gap0", v.gap0)?;
    d.set_item("dist_J1_final", v.dist_j1_final)?;
    d.set_item("monotone_tail", v.monotone_tail)?;
    d.set_item("c_emp_klein", v.c_emp_klein)?;
    d.set_item("runtime_s", v.runtime_s)?;
    d.set_item("relative_entropy_monotone", v.relative_entropy_monotone)?;
    d.set_item("target", v.target)?;
    d.set_item("pass", v.pass)?;
    Ok(trajectory(traj, Some(d.unbind())))
}

/// Randomized inequality checks; one dict per check, sorted by name.
#[pyfunction]
#[pyo3(signature = (seed, samples, modes = 6, temperature = 10.0))]
fn run_verification<'py>(
    py: Python<'py>,
    seed: u64,
    samples: usize,
    modes: usize,
    temperature: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let space = SpectralSpace::new(modes, temperature).map_err(err)?;
    run_suite(seed, samples, space)
        .map_err(err)?
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", r.name)?;
            d.set_item("anchor", r.anchor)?;
            d.set_item("asserted", r.asserted)?;
            d.set_item("samples", r.samples)?;
            d.set_item("violations", r.violations)?;
            d.set_item("worst_margin", r.worst_margin)?;
            d.set_item("empirical_constant", r.empirical_constant)?;
            d.set_item("fitted_exponent", r.fitted_exponent)?;
            d.set_item("seed", r.seed)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn pyqlbgk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("QlbgkError", m.py().get_type::<QlbgkError>())?;
    m.add_class::<PySpace>()?;
    m.add_class::<PyDensityOperator>()?;
    m.add_class::<PyMomentSolution>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(solve_moment, m)?)?;
    m.add_function(wrap_pyfunction!(maxwellian, m)?)?;
    m.add_function(wrap_pyfunction!(gibbs, m)?)?;
    m.add_function(wrap_pyfunction!(py_evolve, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(run_verification, m)?)?;
    Ok(())
}
