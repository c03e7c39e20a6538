//! Python bindings: models, simulation, sensitivities, sensor selection,
//! estimation, Gramians, OID structure and sweeps.
//!
//! Vectors cross the boundary as `list[float]` and matrices as
//! `list[list[float]]` (row-major).

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use netobs::discretize::{reference_simulate, simulate as simulate_dm, uniform_times, DiscreteModel, Scheme};
use netobs::estimator::{estimate_initial_state, EstimationProblem, ObservationSet};
use netobs::gramian::{empirical_gramian, Definition, GramianConfig};
use netobs::harness::{resolve_model, run_sweep as harness_sweep, ExperimentConfig, StructuralConstraints};
use netobs::model::{ContinuousModel, StateVector};
use netobs::oid::{build_oid, sample_states, scc_decompose};
use netobs::selection::{search, JacobianObjective, SearchStrategy, SelectionConstraints, SensorMask};
use netobs::sensitivity::{stack_output_jacobian, OutputSpec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(value_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn parse_scheme(s: &str) -> PyResult<Scheme> {
    s.parse().map_err(value_err)
}

/// A continuous-time network model `ẋ = q(x)`.
#[pyclass(module = "netobs_py", frozen)]
struct Model {
    inner: ContinuousModel,
}

impl Model {
    fn state(&self, x: Vec<f64>) -> PyResult<StateVector> {
        if x.len() != self.inner.dim() {
            return Err(value_err(format!("expected {} entries, got {}", self.inner.dim(), x.len())));
        }
        Ok(DVector::from_vec(x))
    }

    fn discrete(&self, scheme: &str, h: Option<f64>) -> PyResult<DiscreteModel> {
        let h = h
            .or(self.inner.recommended_h())
            .ok_or_else(|| value_err("h is required for this model"))?;
        DiscreteModel::new(self.inner.clone(), parse_scheme(scheme)?, h).map_err(value_err)
    }

    fn mask(&self, sensors: Vec<usize>) -> PyResult<SensorMask> {
        SensorMask::from_indices(self.inner.dim(), &sensors).map_err(value_err)
    }
}

#[pymethods]
impl Model {
    /// Loads a bundled model by name or a model file by path.
    #[staticmethod]
    fn load(spec: &str) -> PyResult<Self> {
        Ok(Model {
            inner: resolve_model(spec).map_err(value_err)?.model,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn recommended_h(&self) -> Option<f64> {
        self.inner.recommended_h()
    }

    #[getter]
    fn default_state(&self) -> Option<Vec<f64>> {
        self.inner.default_state().map(|x| x.iter().copied().collect())
    }

    fn field(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let q = self.inner.eval_field(&self.state(x)?).map_err(value_err)?;
        Ok(q.iter().copied().collect())
    }

    fn jacobian(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.eval_field_jacobian(&self.state(x)?).map_err(value_err)?))
    }

    /// States at samples `0..n_samples` of the discretized model, or of the
    /// adaptive reference integrator when `reference` is set.
    #[pyo3(signature = (x0, n_samples, scheme = "irk", h = None, reference = false))]
    fn simulate(&self, x0: Vec<f64>, n_samples: usize, scheme: &str, h: Option<f64>, reference: bool) -> PyResult<Vec<Vec<f64>>> {
        let dm = self.discrete(scheme, h)?;
        let x0 = self.state(x0)?;
        let traj = if reference {
            reference_simulate(&self.inner, &x0, &uniform_times(dm.h(), n_samples))
        } else {
            simulate_dm(&dm, &x0, n_samples)
        }
        .map_err(runtime_err)?;
        Ok(traj.states.iter().map(|x| x.iter().copied().collect()).collect())
    }

    /// Stacked output Jacobian `∂(y₀, …, y_{N−1}) / ∂x₀` for the given sensors.
    #[pyo3(signature = (x0, n_samples, sensors, scheme = "irk", h = None))]
    fn output_jacobian(&self, x0: Vec<f64>, n_samples: usize, sensors: Vec<usize>, scheme: &str, h: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
        let dm = self.discrete(scheme, h)?;
        let out = OutputSpec::Matrix(self.mask(sensors)?.selection_matrix());
        let stack = stack_output_jacobian(&dm, &self.state(x0)?, n_samples, &out, false).map_err(runtime_err)?;
        Ok(rows(&stack.full))
    }

    /// Chooses `r` sensors maximizing the log-determinant objective.
    #[pyo3(signature = (x0, n_samples, r, solver = "greedy", scheme = "irk", h = None, seed = 0, budget = 200, oid_blind = false))]
    #[allow(clippy::too_many_arguments)]
    fn select_sensors(
        &self,
        x0: Vec<f64>,
        n_samples: usize,
        r: usize,
        solver: &str,
        scheme: &str,
        h: Option<f64>,
        seed: u64,
        budget: usize,
        oid_blind: bool,
    ) -> PyResult<Selection> {
        let dm = self.discrete(scheme, h)?;
        let constraints = if oid_blind {
            SelectionConstraints::with_count(r)
        } else {
            StructuralConstraints::from_model(&self.inner, seed).constraints(r)
        };
        let strategy = match solver {
            "exhaustive" => SearchStrategy::Exhaustive,
            "greedy" => SearchStrategy::Greedy,
            "stochastic" => SearchStrategy::Stochastic { budget, seed },
            other => return Err(value_err(format!("unknown solver '{other}'"))),
        };
        let objective = JacobianObjective::new(&dm, &self.state(x0)?, n_samples).map_err(runtime_err)?;
        let result = search(&objective, &constraints, strategy).map_err(value_err)?;
        Ok(Selection {
            sensors: result.mask.indices(),
            objective: result.objective,
            degenerate: result.degenerate(),
            evaluations: result.evaluations,
        })
    }

    /// Fits the initial state to measurements `y[k][j]` of nodes `sensors`.
    #[pyo3(signature = (y, sensors, guess, scheme = "irk", h = None, truth = None))]
    fn estimate(
        &self,
        y: Vec<Vec<f64>>,
        sensors: Vec<usize>,
        guess: Vec<f64>,
        scheme: &str,
        h: Option<f64>,
        truth: Option<Vec<f64>>,
    ) -> PyResult<Estimate> {
        let dm = self.discrete(scheme, h)?;
        let mask = self.mask(sensors)?;
        let names = mask.indices().iter().map(|&i| self.inner.names()[i].clone()).collect();
        let y = y.into_iter().map(DVector::from_vec).collect();
        let obs = ObservationSet::new(y, mask.selection_matrix(), dm.h(), dm.scheme(), names).map_err(value_err)?;
        let mut problem = EstimationProblem::new(dm, obs, self.state(guess)?).map_err(value_err)?;
        if let Some(t) = truth {
            problem = problem.with_truth(self.state(t)?);
        }
        let res = estimate_initial_state(&problem).map_err(runtime_err)?;
        Ok(Estimate {
            x_hat: res.x_hat.iter().copied().collect(),
            eta: res.eta,
            iterations: res.iterations,
            kappa: res.kappa,
            rank_ok: res.rank_ok,
            converged: res.converged,
        })
    }

    /// Empirical observability Gramian (definition 1, 2 or 3) over
    /// `(n_samples − 1) · h`.
    #[pyo3(signature = (x0, n_samples, sensors, definition = 2, h = None, orthogonal = 1, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn gramian(
        &self,
        x0: Vec<f64>,
        n_samples: usize,
        sensors: Vec<usize>,
        definition: u8,
        h: Option<f64>,
        orthogonal: usize,
        seed: u64,
    ) -> PyResult<Vec<Vec<f64>>> {
        let def = Definition::from_number(definition).ok_or_else(|| value_err("definition must be 1, 2 or 3"))?;
        let h = h
            .or(self.inner.recommended_h())
            .ok_or_else(|| value_err("h is required for this model"))?;
        let mut cfg = GramianConfig::new(self.state(x0)?, h, n_samples.saturating_sub(1).max(1));
        if orthogonal > 1 {
            cfg = cfg.with_random_orthogonal(orthogonal, seed);
        }
        let c = self.mask(sensors)?.selection_matrix();
        let g = empirical_gramian(def, &self.inner, &c, &cfg).map_err(runtime_err)?;
        Ok(rows(&g.matrix))
    }

    /// Strongly connected components of the OID and whether each is a root.
    #[pyo3(signature = (samples = 20, threshold = 1e-12, seed = 0))]
    fn sccs(&self, samples: usize, threshold: f64, seed: u64) -> PyResult<(Vec<Vec<usize>>, Vec<bool>)> {
        let states = sample_states(&self.inner, samples, seed);
        let g = build_oid(&self.inner, &states, threshold).map_err(runtime_err)?;
        let scc = scc_decompose(&g);
        Ok((scc.components, scc.is_root))
    }

    fn __repr__(&self) -> String {
        format!("Model(dim={}, names={:?})", self.inner.dim(), self.inner.names())
    }
}

#[pyclass(module = "netobs_py", frozen, get_all)]
struct Selection {
    sensors: Vec<usize>,
    objective: f64,
    degenerate: bool,
    evaluations: usize,
}

#[pymethods]
impl Selection {
    fn __repr__(&self) -> String {
        format!("Selection(sensors={:?}, objective={})", self.sensors, self.objective)
    }
}

#[pyclass(module = "netobs_py", frozen, get_all)]
struct Estimate {
    x_hat: Vec<f64>,
    eta: Option<f64>,
    iterations: usize,
    kappa: f64,
    rank_ok: bool,
    converged: bool,
}

#[pymethods]
impl Estimate {
    fn __repr__(&self) -> String {
        format!("Estimate(eta={:?}, iterations={}, kappa={:.3e})", self.eta, self.iterations, self.kappa)
    }
}

/// Log-determinant of a symmetric positive semidefinite matrix, `-inf` when
/// degenerate.
#[pyfunction]
fn logdet(matrix: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(netobs::selection::ObjectiveValue::of_gram(&from_rows(&matrix)?).value())
}

/// Runs a sweep from TOML config text; returns one dict-like tuple per run:
/// `(r, n_samples, realization, mask, eta, status)`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn run_sweep(config_toml: &str) -> PyResult<Vec<(usize, usize, usize, String, Option<f64>, String)>> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(value_err)?;
    let records = harness_sweep(&cfg).map_err(value_err)?;
    Ok(records
        .into_iter()
        .map(|r| {
            (
                r.r,
                r.n_samples,
                r.realization,
                r.mask.map(|m| m.to_bit_string()).unwrap_or_default(),
                r.eta,
                r.status,
            )
        })
        .collect())
}

#[pymodule]
fn netobs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Selection>()?;
    m.add_class::<Estimate>()?;
    m.add_function(wrap_pyfunction!(logdet, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
