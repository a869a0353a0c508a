//! Python bindings.
//!
//! Measures, coefficient specs and the four solvers, with plain lists in
//! and out.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ranknoise::coefficients::InitialLaw as CoreLaw;
use ranknoise::limit_solver::base_solution;
use ranknoise::measures::w1_from_cdfs;
use ranknoise::particle_sim::time_steps;
use ranknoise::pme_solver::{solve_pme as core_solve_pme, uniform_times};
use ranknoise::{
    BrownianPath, CoefficientSpec, Error, FixedPointConfig, GammaSpec, InitialCandidate, InitialLawSpec, Integrand,
    LimitProblem, PmeGrid, RankFunction, SimConfig, WassersteinOrder,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Domain { .. }
        | Error::InvalidMeasure(_)
        | Error::InvalidSpec(_)
        | Error::GridMismatch(_)
        | Error::TimeGridMismatch(_)
        | Error::Cfl { .. }
        | Error::LipschitzExceeded { .. }
        | Error::SupportTouchesBoundary { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Sorted sample with mass `1/n` per atom.
#[pyclass(name = "EmpiricalMeasure", module = "ranknoise", frozen)]
#[derive(Clone)]
pub struct PyEmpirical(ranknoise::EmpiricalMeasure);

#[pymethods]
impl PyEmpirical {
    #[new]
    fn new(points: Vec<f64>) -> PyResult<Self> {
        ranknoise::EmpiricalMeasure::new(points).map(Self).map_err(py_err)
    }

    #[getter]
    fn points(&self) -> Vec<f64> {
        self.0.points().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn cdf(&self, x: f64) -> f64 {
        self.0.cdf(x)
    }

    fn quantile(&self, u: f64) -> PyResult<f64> {
        self.0.quantile(u).map_err(py_err)
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn shift(&self, c: f64) -> Self {
        Self(self.0.shift(c))
    }

    #[pyo3(signature = (other, p = 1.0))]
    fn wasserstein(&self, other: &PyEmpirical, p: f64) -> PyResult<f64> {
        wasserstein(self, other, p)
    }

    fn to_grid(&self, x_min: f64, x_max: f64, m: usize) -> PyResult<PyGridCdf> {
        self.0
            .to_grid(x_min, x_max, m, ranknoise::BOUNDARY_MASS_TOL)
            .map(PyGridCdf)
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("EmpiricalMeasure(n={}, mean={})", self.0.len(), self.0.mean())
    }
}

/// CDF values on a uniform grid, linear in between.
#[pyclass(name = "GridCdf", module = "ranknoise", frozen)]
#[derive(Clone)]
pub struct PyGridCdf(ranknoise::GridCdf);

#[pymethods]
impl PyGridCdf {
    #[new]
    fn new(x_min: f64, x_max: f64, values: Vec<f64>) -> PyResult<Self> {
        ranknoise::GridCdf::new(x_min, x_max, values).map(Self).map_err(py_err)
    }

    #[getter]
    fn x_min(&self) -> f64 {
        self.0.x_min()
    }

    #[getter]
    fn x_max(&self) -> f64 {
        self.0.x_max()
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.0.dx()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.0.nodes().collect()
    }

    fn __call__(&self, x: f64) -> f64 {
        self.0.eval(x)
    }

    fn quantile(&self, u: f64) -> PyResult<f64> {
        self.0.quantile(u).map_err(py_err)
    }

    fn shift(&self, c: f64) -> PyResult<Self> {
        self.0.shift(c).map(Self).map_err(py_err)
    }

    /// `W_1` as the integral of the CDF difference.
    fn w1(&self, other: &PyGridCdf) -> PyResult<f64> {
        w1_from_cdfs(&self.0, &other.0).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("GridCdf([{}, {}], m={})", self.0.x_min(), self.0.x_max(), self.0.len())
    }
}

fn rank_function(obj: &Bound<'_, PyAny>, name: &str) -> PyResult<RankFunction> {
    if let Ok(c) = obj.extract::<f64>() {
        return Ok(RankFunction::Constant(c));
    }
    if let Ok(values) = obj.extract::<Vec<f64>>() {
        return Ok(RankFunction::Table(values));
    }
    if let Ok((kind, a, b)) = obj.extract::<(String, f64, f64)>() {
        if kind == "affine" {
            return Ok(RankFunction::Affine { intercept: a, slope: b });
        }
    }
    Err(PyValueError::new_err(format!(
        "{name}: expected a number, a list of table values or (\"affine\", intercept, slope)"
    )))
}

/// The coefficient triple `(b, sigma, gamma)`.
///
/// `b` and `sigma` are numbers (constants), lists (piecewise-linear tables
/// on `[0, 1]`) or `("affine", intercept, slope)`. `gamma` is a number or
/// `("tanh" | "sine" | "atan", scale, rate)` for `int f dnu`.
#[pyclass(name = "Coefficients", module = "ranknoise", frozen)]
#[derive(Clone)]
pub struct PyCoefficients(CoefficientSpec);

#[pymethods]
impl PyCoefficients {
    #[new]
    #[pyo3(signature = (b, sigma, gamma = None, degenerate = false))]
    fn new(b: &Bound<'_, PyAny>, sigma: &Bound<'_, PyAny>, gamma: Option<&Bound<'_, PyAny>>, degenerate: bool) -> PyResult<Self> {
        let b = rank_function(b, "b")?;
        let sigma = rank_function(sigma, "sigma")?;
        let gamma = match gamma {
            None => GammaSpec::zero(),
            Some(g) => {
                if let Ok(c) = g.extract::<f64>() {
                    GammaSpec::constant(c)
                } else {
                    let (kind, scale, rate) = g.extract::<(String, f64, f64)>().map_err(|_| {
                        PyValueError::new_err("gamma: expected a number or (integrand, scale, rate)")
                    })?;
                    let f = match kind.as_str() {
                        "tanh" => Integrand::Tanh { scale, rate },
                        "sine" => Integrand::Sine { scale, rate },
                        "atan" => Integrand::Atan { scale, rate },
                        other => return Err(PyValueError::new_err(format!("unknown integrand {other:?}"))),
                    };
                    GammaSpec::mean_functional(f)
                }
            }
        };
        let spec = if degenerate {
            CoefficientSpec::degenerate(b, sigma, gamma)
        } else {
            CoefficientSpec::new(b, sigma, gamma)
        };
        spec.map(Self).map_err(py_err)
    }

    /// `B(r) = int_0^r b`.
    fn flux(&self, r: f64) -> f64 {
        self.0.flux(r)
    }

    /// `Sigma(r) = int_0^r sigma^2 / 2`.
    fn diffusion(&self, r: f64) -> f64 {
        self.0.diffusion(r)
    }

    #[getter]
    fn gamma_lipschitz(&self) -> f64 {
        self.0.gamma().lipschitz()
    }
}

#[pyclass(name = "InitialLaw", module = "ranknoise", frozen)]
#[derive(Clone)]
pub struct PyInitialLaw(InitialLawSpec);

#[pymethods]
impl PyInitialLaw {
    #[staticmethod]
    #[pyo3(signature = (mean = 0.0, sd = 1.0))]
    fn gaussian(mean: f64, sd: f64) -> PyResult<Self> {
        InitialLawSpec::gaussian(mean, sd).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn dirac(at: f64) -> Self {
        Self(InitialLawSpec::dirac(at))
    }

    /// Piecewise-linear CDF through `(x, F)`.
    #[staticmethod]
    fn table(x: Vec<f64>, cdf: Vec<f64>) -> PyResult<Self> {
        let t = ranknoise::coefficients::CdfTable::new(x, cdf).map_err(py_err)?;
        InitialLawSpec::new(CoreLaw::Table(t), 2.0).map(Self).map_err(py_err)
    }

    fn cdf(&self, x: f64) -> f64 {
        self.0.cdf(x)
    }

    fn quantile(&self, u: f64) -> f64 {
        self.0.quantile(u)
    }
}

#[pyfunction]
#[pyo3(signature = (mu, nu, p = 1.0))]
fn wasserstein(mu: &PyEmpirical, nu: &PyEmpirical, p: f64) -> PyResult<f64> {
    let order = WassersteinOrder::new(p).map_err(py_err)?;
    Ok(ranknoise::measures::wasserstein(&mu.0, &nu.0, order))
}

/// The deterministic CDF `R` at the output times.
#[pyclass(name = "PmeSolution", module = "ranknoise", frozen)]
pub struct PyPmeSolution {
    #[pyo3(get)]
    times: Vec<f64>,
    #[pyo3(get)]
    c_star: f64,
    #[pyo3(get)]
    steps: usize,
    slices: Vec<ranknoise::GridCdf>,
}

#[pymethods]
impl PyPmeSolution {
    #[getter]
    fn slices(&self) -> Vec<PyGridCdf> {
        self.slices.iter().cloned().map(PyGridCdf).collect()
    }
}

/// Solves on `[x_min, x_max]` when both are given, else on a domain sized
/// from the law; output every `dt` up to `horizon`.
#[pyfunction]
#[pyo3(signature = (coefficients, law, horizon = 1.0, dt = 0.1, m = 1001, x_min = None, x_max = None))]
fn solve_pme(
    py: Python<'_>,
    coefficients: &PyCoefficients,
    law: &PyInitialLaw,
    horizon: f64,
    dt: f64,
    m: usize,
    x_min: Option<f64>,
    x_max: Option<f64>,
) -> PyResult<PyPmeSolution> {
    let (c, l) = (coefficients.0.clone(), law.0.clone());
    let sol = py
        .allow_threads(move || {
            let grid = match (x_min, x_max) {
                (Some(a), Some(b)) => PmeGrid::with_cfl(a, b, m, horizon, &c)?,
                _ => PmeGrid::for_law(&l, &c, m, horizon)?,
            };
            core_solve_pme(&grid.initial(&l)?, &c, &grid, &uniform_times(horizon, dt))
        })
        .map_err(py_err)?;
    Ok(PyPmeSolution {
        times: sol.times().to_vec(),
        c_star: sol.c_star(),
        steps: sol.steps_taken(),
        slices: sol.into_slices(),
    })
}

#[pyclass(name = "Trajectory", module = "ranknoise", frozen)]
pub struct PyTrajectory {
    #[pyo3(get)]
    times: Vec<f64>,
    /// `Gamma(t_j)`.
    #[pyo3(get)]
    gamma_integral: Vec<f64>,
    #[pyo3(get)]
    gamma_values: Vec<f64>,
    states: Vec<ranknoise::EmpiricalMeasure>,
}

#[pymethods]
impl PyTrajectory {
    /// The empirical measure at step `j`.
    fn state(&self, j: usize) -> PyResult<PyEmpirical> {
        self.states
            .get(j)
            .cloned()
            .map(PyEmpirical)
            .ok_or_else(|| PyValueError::new_err(format!("step {j} out of range")))
    }

    fn __len__(&self) -> usize {
        self.times.len()
    }
}

#[pyfunction]
#[pyo3(signature = (coefficients, law, n, horizon = 1.0, dt = 1e-3, seed = 42))]
fn simulate(
    py: Python<'_>,
    coefficients: &PyCoefficients,
    law: &PyInitialLaw,
    n: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> PyResult<PyTrajectory> {
    let cfg = SimConfig::new(n, horizon, dt, seed, coefficients.0.clone(), law.0.clone()).map_err(py_err)?;
    let traj = py.allow_threads(|| ranknoise::particle_sim::simulate(&cfg)).map_err(py_err)?;
    Ok(PyTrajectory {
        times: traj.times,
        gamma_integral: traj.gamma_integral,
        gamma_values: traj.gamma_values,
        states: traj.states,
    })
}

#[pyclass(name = "LimitPath", module = "ranknoise", frozen)]
pub struct PyLimitPath {
    #[pyo3(get)]
    times: Vec<f64>,
    #[pyo3(get)]
    gamma_path: Vec<f64>,
    /// `sup_j W_1` between successive iterates.
    #[pyo3(get)]
    log: Vec<f64>,
    slices: Vec<ranknoise::GridCdf>,
}

#[pymethods]
impl PyLimitPath {
    fn slice(&self, j: usize) -> PyResult<PyGridCdf> {
        self.slices
            .get(j)
            .cloned()
            .map(PyGridCdf)
            .ok_or_else(|| PyValueError::new_err(format!("time index {j} out of range")))
    }
}

/// The limit `G(t, x) = R(t, x - Gamma(t))` on the common path of `seed`.
#[pyfunction]
#[pyo3(signature = (coefficients, law, horizon = 1.0, dt = 1e-3, seed = 42, m = 1601, tol = 1e-8, max_iter = 50))]
#[allow(clippy::too_many_arguments)]
fn fixed_point(
    py: Python<'_>,
    coefficients: &PyCoefficients,
    law: &PyInitialLaw,
    horizon: f64,
    dt: f64,
    seed: u64,
    m: usize,
    tol: f64,
    max_iter: usize,
) -> PyResult<PyLimitPath> {
    let (c, l) = (coefficients.0.clone(), law.0.clone());
    let path = py
        .allow_threads(move || {
            let cfg = FixedPointConfig::new(tol, max_iter)?;
            let (steps, dt, _) = time_steps(horizon, dt);
            let base = base_solution(&l, &c, m, horizon, dt)?;
            LimitProblem::new(Arc::new(base), c, BrownianPath::common(seed, dt, steps))?
                .fixed_point_solve(&InitialCandidate::PmeLaw, &cfg)
        })
        .map_err(py_err)?;
    Ok(PyLimitPath {
        times: path.times,
        gamma_path: path.gamma_path,
        log: path.log,
        slices: path.slices,
    })
}

#[pymodule]
#[pyo3(name = "ranknoise")]
pub fn ranknoise_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", ranknoise::VERSION)?;
    m.add_class::<PyEmpirical>()?;
    m.add_class::<PyGridCdf>()?;
    m.add_class::<PyCoefficients>()?;
    m.add_class::<PyInitialLaw>()?;
    m.add_class::<PyPmeSolution>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyLimitPath>()?;
    m.add_function(wrap_pyfunction!(wasserstein, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pme, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_point, m)?)?;
    Ok(())
}
