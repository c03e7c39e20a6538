//! Implicit one-step discretizations and trajectory simulation.
//!
//! Three fixed-step schemes are provided:
//!
//! * backward Euler: `x_k = x_{k-1} + h q(x_k)`
//! * implicit trapezoid: `x_k = x_{k-1} + h/2 (q(x_k) + q(x_{k-1}))`
//! * two-stage implicit Runge–Kutta (Radau IA tableau):
//!   `ζ1 = x_{k-1} + h/4 (q(ζ1) − q(ζ2))`,
//!   `ζ2 = x_{k-1} + h/12 (3 q(ζ1) + 5 q(ζ2))`,
//!   `x_k = x_{k-1} + h/4 (q(ζ1) + 3 q(ζ2))`.
//!
//! The implicit equations are solved by Newton's method with a halving line
//! search. [`reference_simulate`] wraps the IRK step in step-doubling error
//! control and serves as the high-accuracy data generator.

use std::cell::Cell;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{lu_solve_vec, SingularMatrix};
use crate::model::{ContinuousModel, ModelError, StateVector};

thread_local! {
    static SIMULATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`simulate`] calls made on the current thread.
pub fn simulation_count() -> u64 {
    SIMULATIONS.with(|c| c.get())
}

/// Runs `f` and returns its output with the number of simulations it performed
/// on this thread.
pub fn count_simulations<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = simulation_count();
    let out = f();
    (out, simulation_count() - before)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Be,
    Ti,
    Irk,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Be, Scheme::Ti, Scheme::Irk];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Be => "be",
            Scheme::Ti => "ti",
            Scheme::Irk => "irk",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "be" => Ok(Scheme::Be),
            "ti" => Ok(Scheme::Ti),
            "irk" => Ok(Scheme::Irk),
            other => Err(format!("unknown scheme '{other}' (expected be, ti or irk)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub rtol: f64,
    pub atol: f64,
    pub max_iterations: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            rtol: 1e-12,
            atol: 1e-14,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StepError {
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Newton linear solve failed: {0}")]
    Singular(#[from] SingularMatrix),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimulationError {
    #[error("step {index} failed: {source}")]
    Step {
        index: usize,
        #[source]
        source: StepError,
    },
    #[error("invalid simulation request: {0}")]
    Invalid(String),
    #[error("reference integration failed at t = {t:e}: {reason}")]
    Reference { t: f64, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A continuous model paired with a scheme and step size.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    model: ContinuousModel,
    scheme: Scheme,
    h: f64,
    newton: NewtonSettings,
}

impl DiscreteModel {
    pub fn new(model: ContinuousModel, scheme: Scheme, h: f64) -> Result<Self, SimulationError> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(SimulationError::Invalid(format!("step size must be positive and finite, got {h}")));
        }
        Ok(DiscreteModel {
            model,
            scheme,
            h,
            newton: NewtonSettings::default(),
        })
    }

    pub fn with_newton(mut self, newton: NewtonSettings) -> Self {
        self.newton = newton;
        self
    }

    pub fn model(&self) -> &ContinuousModel {
        &self.model
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn newton(&self) -> &NewtonSettings {
        &self.newton
    }

    pub fn with_scheme(&self, scheme: Scheme) -> Self {
        DiscreteModel {
            scheme,
            ..self.clone()
        }
    }

    pub fn step(&self, x_prev: &StateVector) -> Result<StepResult, StepError> {
        self.model.check_state(x_prev)?;
        match self.scheme {
            Scheme::Be => one_stage_step(&self.model, x_prev, self.h, 1.0, &self.newton),
            Scheme::Ti => one_stage_step(&self.model, x_prev, self.h, 0.5, &self.newton),
            Scheme::Irk => irk_step(&self.model, x_prev, self.h, &self.newton),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub x_next: StateVector,
    /// IRK stage vectors `(ζ1, ζ2)`.
    pub stages: Option<(StateVector, StateVector)>,
    pub newton_iterations: usize,
    pub converged: bool,
    /// Final infinity-norm residual of the implicit equations.
    pub residual: f64,
}

/// Newton on `F(z) = 0` with halving line search.
///
/// `scale(z)` supplies the magnitude used by the relative tolerance.
fn newton_solve<R, J>(
    mut z: DVector<f64>,
    residual: R,
    jacobian: J,
    settings: &NewtonSettings,
) -> Result<(DVector<f64>, usize, f64), StepError>
where
    R: Fn(&DVector<f64>) -> Result<(DVector<f64>, f64), ModelError>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>, ModelError>,
{
    let (mut f, mut scale) = residual(&z)?;
    let mut norm = f.amax();
    let tol = |scale: f64| settings.atol + settings.rtol * scale;
    if norm <= tol(scale) {
        return Ok((z, 0, norm));
    }
    for iter in 1..=settings.max_iterations {
        let jac = jacobian(&z)?;
        let delta = lu_solve_vec(&jac, &(-&f))?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = &z + &delta * lambda;
            if let Ok((ft, st)) = residual(&trial) {
                let nt = ft.amax();
                if nt.is_finite() && (nt < norm || nt <= tol(st)) {
                    accepted = Some((trial, ft, st, nt));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((zt, ft, st, nt)) = accepted else {
            return Err(StepError::NoConvergence {
                iterations: iter,
                residual: norm,
            });
        };
        z = zt;
        f = ft;
        scale = st;
        norm = nt;
        if norm <= tol(scale) {
            return Ok((z, iter, norm));
        }
    }
    Err(StepError::NoConvergence {
        iterations: settings.max_iterations,
        residual: norm,
    })
}

/// BE (`theta = 1`) and TI (`theta = 1/2`) steps:
/// `x = x_prev + h (theta q(x) + (1 − theta) q(x_prev))`.
fn one_stage_step(
    model: &ContinuousModel,
    x_prev: &StateVector,
    h: f64,
    theta: f64,
    settings: &NewtonSettings,
) -> Result<StepResult, StepError> {
    let n = model.dim();
    let explicit = if theta < 1.0 {
        model.eval_field(x_prev)? * ((1.0 - theta) * h)
    } else {
        DVector::zeros(n)
    };
    let base = x_prev + &explicit;
    let prev_scale = x_prev.amax().max(explicit.amax());
    let residual = |x: &DVector<f64>| -> Result<(DVector<f64>, f64), ModelError> {
        let hq = model.eval_field(x)? * (theta * h);
        let scale = prev_scale.max(x.amax()).max(hq.amax());
        Ok((x - &base - hq, scale))
    };
    let jacobian = |x: &DVector<f64>| -> Result<DMatrix<f64>, ModelError> {
        Ok(DMatrix::identity(n, n) - model.eval_field_jacobian(x)? * (theta * h))
    };
    let (x_next, iterations, res) = newton_solve(x_prev.clone(), residual, jacobian, settings)?;
    Ok(StepResult {
        x_next,
        stages: None,
        newton_iterations: iterations,
        converged: true,
        residual: res,
    })
}

/// Residual of the IRK stage equations at `(ζ1, ζ2)`.
pub fn irk_stage_residual(
    model: &ContinuousModel,
    x_prev: &StateVector,
    h: f64,
    zeta1: &StateVector,
    zeta2: &StateVector,
) -> Result<(StateVector, StateVector), ModelError> {
    let q1 = model.eval_field(zeta1)?;
    let q2 = model.eval_field(zeta2)?;
    let r1 = zeta1 - x_prev - (&q1 - &q2) * (h / 4.0);
    let r2 = zeta2 - x_prev - (q1 * 3.0 + q2 * 5.0) * (h / 12.0);
    Ok((r1, r2))
}

fn irk_step(
    model: &ContinuousModel,
    x_prev: &StateVector,
    h: f64,
    settings: &NewtonSettings,
) -> Result<StepResult, StepError> {
    let n = model.dim();
    let prev_scale = x_prev.amax();
    let split = |z: &DVector<f64>| (z.rows(0, n).into_owned(), z.rows(n, n).into_owned());
    let residual = |z: &DVector<f64>| -> Result<(DVector<f64>, f64), ModelError> {
        let (z1, z2) = split(z);
        let q1 = model.eval_field(&z1)?;
        let q2 = model.eval_field(&z2)?;
        let scale = prev_scale
            .max(z.amax())
            .max(h * q1.amax())
            .max(h * q2.amax());
        let r1 = &z1 - x_prev - (&q1 - &q2) * (h / 4.0);
        let r2 = &z2 - x_prev - (q1 * 3.0 + q2 * 5.0) * (h / 12.0);
        let mut f = DVector::zeros(2 * n);
        f.rows_mut(0, n).copy_from(&r1);
        f.rows_mut(n, n).copy_from(&r2);
        Ok((f, scale))
    };
    let jacobian = |z: &DVector<f64>| -> Result<DMatrix<f64>, ModelError> {
        let (z1, z2) = split(z);
        let j1 = model.eval_field_jacobian(&z1)?;
        let j2 = model.eval_field_jacobian(&z2)?;
        let eye = DMatrix::<f64>::identity(n, n);
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&(&eye - &j1 * (h / 4.0)));
        m.view_mut((0, n), (n, n)).copy_from(&(&j2 * (h / 4.0)));
        m.view_mut((n, 0), (n, n)).copy_from(&(&j1 * (-h / 4.0)));
        m.view_mut((n, n), (n, n)).copy_from(&(&eye - &j2 * (5.0 * h / 12.0)));
        Ok(m)
    };
    let mut z0 = DVector::zeros(2 * n);
    z0.rows_mut(0, n).copy_from(x_prev);
    z0.rows_mut(n, n).copy_from(x_prev);
    let (z, iterations, res) = newton_solve(z0, residual, jacobian, settings)?;
    let (zeta1, zeta2) = split(&z);
    let q1 = model.eval_field(&zeta1)?;
    let q2 = model.eval_field(&zeta2)?;
    let x_next = x_prev + (q1 + q2 * 3.0) * (h / 4.0);
    Ok(StepResult {
        x_next,
        stages: Some((zeta1, zeta2)),
        newton_iterations: iterations,
        converged: true,
        residual: res,
    })
}

/// A sampled state sequence `x_0 … x_{N−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    pub times: Vec<f64>,
    /// IRK stages; entry `k − 1` holds the stages producing `states[k]`.
    pub stages: Option<Vec<(StateVector, StateVector)>>,
    /// `None` for reference trajectories.
    pub scheme: Option<Scheme>,
    pub h: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &StateVector {
        self.states.last().expect("trajectories are never empty")
    }

    /// Writes `t,<names…>` with one row per sample at 17 significant digits.
    pub fn write_csv<W: Write>(&self, names: &[String], mut out: W) -> std::io::Result<()> {
        write!(out, "t")?;
        for name in names {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(out, "{t:.16e}")?;
            for v in x.iter() {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, names: &[String], path: impl AsRef<Path>) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(names, std::io::BufWriter::new(file))
    }
}

/// Simulates `n_samples` states starting at `x0` (`states[0] = x0`).
pub fn simulate(dm: &DiscreteModel, x0: &StateVector, n_samples: usize) -> Result<Trajectory, SimulationError> {
    if n_samples == 0 {
        return Err(SimulationError::Invalid("observation length must be at least 1".into()));
    }
    dm.model.check_state(x0)?;
    SIMULATIONS.with(|c| c.set(c.get() + 1));
    let mut states = Vec::with_capacity(n_samples);
    let mut stages = (dm.scheme == Scheme::Irk).then(|| Vec::with_capacity(n_samples.saturating_sub(1)));
    states.push(x0.clone());
    for k in 1..n_samples {
        let step = dm
            .step(&states[k - 1])
            .map_err(|source| SimulationError::Step { index: k, source })?;
        if let (Some(st), Some(pair)) = (stages.as_mut(), step.stages) {
            st.push(pair);
        }
        states.push(step.x_next);
    }
    Ok(Trajectory {
        times: (0..n_samples).map(|k| k as f64 * dm.h).collect(),
        states,
        stages,
        scheme: Some(dm.scheme),
        h: Some(dm.h),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSettings {
    pub rtol: f64,
    pub atol: f64,
    /// Smallest admissible step relative to `max(1, |t|)`.
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        ReferenceSettings {
            rtol: 1e-10,
            atol: 1e-14,
            min_step: 1e-15,
            max_steps: 5_000_000,
        }
    }
}

/// High-accuracy adaptive integration sampled at `times` (`times[0] = 0`).
pub fn reference_simulate(
    model: &ContinuousModel,
    x0: &StateVector,
    times: &[f64],
) -> Result<Trajectory, SimulationError> {
    reference_simulate_with(model, x0, times, &ReferenceSettings::default())
}

/// Step-doubling error control on the IRK step with local extrapolation.
pub fn reference_simulate_with(
    model: &ContinuousModel,
    x0: &StateVector,
    times: &[f64],
    settings: &ReferenceSettings,
) -> Result<Trajectory, SimulationError> {
    model.check_state(x0)?;
    if times.is_empty() || times[0] != 0.0 {
        return Err(SimulationError::Invalid("sample times must start at 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SimulationError::Invalid("sample times must be strictly increasing".into()));
    }
    let newton = NewtonSettings::default();
    let t_end = *times.last().unwrap();
    let mut states = vec![x0.clone()];
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut h = {
        let q = model.eval_field(x0)?;
        let rate = q.amax() / (x0.amax() + settings.atol);
        let guess = if rate > 0.0 { 1e-3 / rate } else { t_end };
        guess.min(t_end).max(1e-12 * t_end.max(1.0))
    };
    let mut steps = 0usize;
    for &target in &times[1..] {
        while t < target {
            steps += 1;
            if steps > settings.max_steps {
                return Err(SimulationError::Reference {
                    t,
                    reason: "step budget exhausted".into(),
                });
            }
            let remaining = target - t;
            let clamped = h >= remaining;
            let h_try = if clamped { remaining } else { h };
            let attempt = (|| -> Result<(StateVector, f64), StepError> {
                let full = irk_step(model, &x, h_try, &newton)?.x_next;
                let half = irk_step(model, &x, 0.5 * h_try, &newton)?.x_next;
                let half = irk_step(model, &half, 0.5 * h_try, &newton)?.x_next;
                let diff = (&half - &full) / 7.0;
                let mut err: f64 = 0.0;
                for i in 0..x.len() {
                    let sc = settings.atol + settings.rtol * x[i].abs().max(half[i].abs());
                    err = err.max(diff[i].abs() / sc);
                }
                Ok((half + diff, err))
            })();
            match attempt {
                Ok((x_new, err)) if err <= 1.0 && x_new.iter().all(|v| v.is_finite()) => {
                    x = x_new;
                    t = if clamped { target } else { t + h_try };
                    let factor = if err == 0.0 { 4.0 } else { (0.9 * err.powf(-0.25)).clamp(0.2, 4.0) };
                    let proposal = h_try * factor;
                    h = if clamped { h.max(proposal) } else { proposal };
                }
                Ok((_, err)) => {
                    let factor = if err.is_finite() { (0.9 * err.powf(-0.25)).clamp(0.1, 0.5) } else { 0.25 };
                    h = h_try * factor;
                }
                Err(_) => h = h_try * 0.25,
            }
            if h < settings.min_step * t.abs().max(1.0) {
                return Err(SimulationError::Reference {
                    t,
                    reason: format!("step size {h:e} fell below the minimum"),
                });
            }
        }
        states.push(x.clone());
    }
    Ok(Trajectory {
        states,
        times: times.to_vec(),
        stages: None,
        scheme: None,
        h: None,
    })
}

/// Sample times `0, h, …, (N−1) h`.
pub fn uniform_times(h: f64, n_samples: usize) -> Vec<f64> {
    (0..n_samples).map(|k| k as f64 * h).collect()
}
