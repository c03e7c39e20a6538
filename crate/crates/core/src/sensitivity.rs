//! Analytic step sensitivities and stacked output Jacobians.
//!
//! For a trajectory `x_0 … x_{N−1}` the sensitivity of `x_k` to the initial
//! state is the product `P_k = S_k ⋯ S_1` of per-step factors
//! `S_j = ∂x_j/∂x_{j−1}`. The signed stack has blocks `−C P_k` (the Jacobian of
//! the residual `y − Cx`); the unsigned stack has blocks `C P_k`. The
//! mask-free stack `J²` has blocks `P_k`.

use std::io::Write;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::discretize::{simulate, DiscreteModel, Scheme, SimulationError, StepResult, Trajectory};
use crate::linalg::{lu_solve, write_matrix_csv, SingularMatrix};
use crate::model::{ModelError, StateVector};
use crate::selection::SensorMask;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SensitivityError {
    #[error("step sensitivity at step {step} is singular: {source}")]
    Singular {
        step: usize,
        #[source]
        source: SingularMatrix,
    },
    #[error("IRK sensitivity needs the stage vectors of step {0}")]
    MissingStages(usize),
    #[error("output matrix has {got} columns, model dimension is {expected}")]
    OutputDimension { expected: usize, got: usize },
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `∂x_j/∂x_{j−1}` for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobian {
    pub matrix: DMatrix<f64>,
    pub step: usize,
    pub scheme: Scheme,
}

/// How outputs are formed from states.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputSpec {
    /// `C₁(b) = diag(b)`, giving `n` rows per sample.
    Mask(SensorMask),
    /// An explicit `r × n` output matrix.
    Matrix(DMatrix<f64>),
}

impl OutputSpec {
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        match self {
            OutputSpec::Mask(b) => b.diag_matrix(),
            OutputSpec::Matrix(c) => {
                debug_assert_eq!(c.ncols(), n);
                c.clone()
            }
        }
    }

    pub fn identity(n: usize) -> Self {
        OutputSpec::Matrix(DMatrix::identity(n, n))
    }
}

/// Sensitivity of one step, given its endpoints and (for IRK) stages.
pub fn step_jacobian_between(
    dm: &DiscreteModel,
    x_prev: &StateVector,
    x_next: &StateVector,
    stages: Option<&(StateVector, StateVector)>,
    step: usize,
) -> Result<StepJacobian, SensitivityError> {
    let n = dm.dim();
    let h = dm.h();
    let model = dm.model();
    let eye = DMatrix::<f64>::identity(n, n);
    let singular = |source| SensitivityError::Singular { step, source };
    let matrix = match dm.scheme() {
        Scheme::Be => {
            let a1 = &eye - model.eval_field_jacobian(x_next)? * h;
            lu_solve(&a1, &eye).map_err(singular)?
        }
        Scheme::Ti => {
            let a1 = &eye - model.eval_field_jacobian(x_next)? * (0.5 * h);
            let a2 = &eye + model.eval_field_jacobian(x_prev)? * (0.5 * h);
            lu_solve(&a1, &a2).map_err(singular)?
        }
        Scheme::Irk => {
            let (z1, z2) = stages.ok_or(SensitivityError::MissingStages(step))?;
            let j1 = model.eval_field_jacobian(z1)?;
            let j2 = model.eval_field_jacobian(z2)?;
            let mut m = DMatrix::zeros(2 * n, 2 * n);
            m.view_mut((0, 0), (n, n)).copy_from(&(&eye - &j1 * (h / 4.0)));
            m.view_mut((0, n), (n, n)).copy_from(&(&j2 * (h / 4.0)));
            m.view_mut((n, 0), (n, n)).copy_from(&(&j1 * (-h / 4.0)));
            m.view_mut((n, n), (n, n)).copy_from(&(&eye - &j2 * (5.0 * h / 12.0)));
            let mut rhs = DMatrix::zeros(2 * n, n);
            rhs.view_mut((0, 0), (n, n)).copy_from(&eye);
            rhs.view_mut((n, 0), (n, n)).copy_from(&eye);
            let s = lu_solve(&m, &rhs).map_err(singular)?;
            let s1 = s.rows(0, n);
            let s2 = s.rows(n, n);
            &eye + (&j1 * s1 + &j2 * s2 * 3.0) * (h / 4.0)
        }
    };
    Ok(StepJacobian {
        matrix,
        step,
        scheme: dm.scheme(),
    })
}

/// Sensitivity of a single computed step.
pub fn step_jacobian(
    dm: &DiscreteModel,
    step: &StepResult,
    x_prev: &StateVector,
) -> Result<StepJacobian, SensitivityError> {
    step_jacobian_between(dm, x_prev, &step.x_next, step.stages.as_ref(), 1)
}

/// Stacked output Jacobian plus the pieces it was assembled from.
#[derive(Debug, Clone)]
pub struct JacobianStack {
    /// `(N·r) × n`.
    pub full: DMatrix<f64>,
    pub factors: Vec<StepJacobian>,
    pub output: DMatrix<f64>,
    pub signed: bool,
    /// Mask-free stack `J²`, `(N·n) × n`.
    pub j2: DMatrix<f64>,
    pub trajectory: Trajectory,
}

impl JacobianStack {
    pub fn n_samples(&self) -> usize {
        self.trajectory.len()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.full.ncols()).map(|j| format!("dx0_{j}")).collect();
        write_matrix_csv(&self.full, Some(&header), out)
    }
}

/// Cumulative products `P_0 = I, P_k = S_k P_{k−1}` stacked as `J²`.
fn cumulative_stack(n: usize, factors: &[StepJacobian]) -> DMatrix<f64> {
    let n_samples = factors.len() + 1;
    let mut j2 = DMatrix::zeros(n_samples * n, n);
    let mut p = DMatrix::<f64>::identity(n, n);
    j2.view_mut((0, 0), (n, n)).copy_from(&p);
    for (k, s) in factors.iter().enumerate() {
        p = &s.matrix * p;
        j2.view_mut(((k + 1) * n, 0), (n, n)).copy_from(&p);
    }
    j2
}

/// Assembles the stack from an already simulated trajectory.
pub fn stack_from_trajectory(
    dm: &DiscreteModel,
    trajectory: Trajectory,
    output: &OutputSpec,
    signed: bool,
) -> Result<JacobianStack, SensitivityError> {
    let n = dm.dim();
    let c = output.matrix(n);
    if c.ncols() != n {
        return Err(SensitivityError::OutputDimension {
            expected: n,
            got: c.ncols(),
        });
    }
    let mut factors = Vec::with_capacity(trajectory.len().saturating_sub(1));
    for k in 1..trajectory.len() {
        let stages = trajectory.stages.as_ref().map(|s| &s[k - 1]);
        factors.push(step_jacobian_between(
            dm,
            &trajectory.states[k - 1],
            &trajectory.states[k],
            stages,
            k,
        )?);
    }
    let j2 = cumulative_stack(n, &factors);
    let r = c.nrows();
    let n_samples = trajectory.len();
    let sign = if signed { -1.0 } else { 1.0 };
    let mut full = DMatrix::zeros(n_samples * r, n);
    for k in 0..n_samples {
        let block = &c * j2.rows(k * n, n) * sign;
        full.view_mut((k * r, 0), (r, n)).copy_from(&block);
    }
    Ok(JacobianStack {
        full,
        factors,
        output: c,
        signed,
        j2,
        trajectory,
    })
}

/// Simulates from `x0` and builds the signed (`−C P_k`) or unsigned stack.
pub fn stack_output_jacobian(
    dm: &DiscreteModel,
    x0: &StateVector,
    n_samples: usize,
    output: &OutputSpec,
    signed: bool,
) -> Result<JacobianStack, SensitivityError> {
    let trajectory = simulate(dm, x0, n_samples)?;
    stack_from_trajectory(dm, trajectory, output, signed)
}

/// Central-difference approximation of the stack (test oracle).
pub fn finite_difference_stack(
    dm: &DiscreteModel,
    x0: &StateVector,
    n_samples: usize,
    output: &OutputSpec,
    signed: bool,
) -> Result<DMatrix<f64>, SensitivityError> {
    let n = dm.dim();
    let c = output.matrix(n);
    let r = c.nrows();
    let sign = if signed { -1.0 } else { 1.0 };
    let outputs = |x: &StateVector| -> Result<Vec<StateVector>, SensitivityError> {
        let tr = simulate(dm, x, n_samples)?;
        Ok(tr.states.iter().map(|s| &c * s).collect())
    };
    let mut fd = DMatrix::zeros(n_samples * r, n);
    for i in 0..n {
        let delta = 1e-6 * (1.0 + x0[i].abs());
        let mut plus = x0.clone();
        plus[i] += delta;
        let mut minus = x0.clone();
        minus[i] -= delta;
        let yp = outputs(&plus)?;
        let ym = outputs(&minus)?;
        for k in 0..n_samples {
            let col = (&yp[k] - &ym[k]) * (sign / (2.0 * delta));
            fd.view_mut((k * r, i), (r, 1)).copy_from(&col);
        }
    }
    Ok(fd)
}
