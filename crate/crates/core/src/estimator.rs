//! Initial-state estimation from partial measurements.
//!
//! Given samples `y_k = C x_k`, `k = 0 … N−1`, the initial state is recovered
//! by minimizing `‖g(x₀)‖²` with `g = col(y_k − C x_k(x₀))` inside the model
//! bounds. The Jacobian of `g` is the signed output stack.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::discretize::{simulate, DiscreteModel, Scheme, SimulationError, Trajectory};
use crate::linalg::singular_values;
use crate::model::StateVector;
use crate::selection::SensorMask;
use crate::sensitivity::{stack_from_trajectory, JacobianStack, OutputSpec, SensitivityError};
use crate::trust_region::{self, LeastSquares, StopReason, TrSettings};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EstimationError {
    #[error("invalid observations: {0}")]
    Observations(String),
    #[error("invalid estimation problem: {0}")]
    Problem(String),
    #[error("true state has zero norm")]
    ZeroTruth,
    #[error("residual evaluation failed: {0}")]
    Residual(String),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
}

/// Output samples with the unit-row output matrix that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub y: Vec<DVector<f64>>,
    pub c: DMatrix<f64>,
    pub h: f64,
    pub scheme: Scheme,
    pub sensor_names: Vec<String>,
}

impl ObservationSet {
    pub fn new(
        y: Vec<DVector<f64>>,
        c: DMatrix<f64>,
        h: f64,
        scheme: Scheme,
        sensor_names: Vec<String>,
    ) -> Result<Self, EstimationError> {
        let bad = |m: String| Err(EstimationError::Observations(m));
        if y.is_empty() {
            return bad("at least one sample is required".into());
        }
        for (i, row) in c.row_iter().enumerate() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return bad(format!("row {i} of C is not a unit row"));
            }
        }
        if let Some(k) = y.iter().position(|v| v.len() != c.nrows()) {
            return bad(format!("sample {k} has {} entries, C has {} rows", y[k].len(), c.nrows()));
        }
        if let Some(k) = y.iter().position(|v| v.iter().any(|e| !e.is_finite())) {
            return bad(format!("sample {k} is not finite"));
        }
        if sensor_names.len() != c.nrows() {
            return bad("one sensor name per output row is required".into());
        }
        if !(h > 0.0) {
            return bad(format!("step size must be positive, got {h}"));
        }
        Ok(ObservationSet {
            y,
            c,
            h,
            scheme,
            sensor_names,
        })
    }

    /// Samples every state of `trajectory` through the mask.
    pub fn from_trajectory(
        trajectory: &Trajectory,
        mask: &SensorMask,
        names: &[String],
        h: f64,
        scheme: Scheme,
    ) -> Result<Self, EstimationError> {
        let c = mask.selection_matrix();
        let y = trajectory.states.iter().map(|x| &c * x).collect();
        let sensor_names = mask.indices().into_iter().map(|i| names[i].clone()).collect();
        ObservationSet::new(y, c, h, scheme, sensor_names)
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `N·r ≥ n`, necessary for observability.
    pub fn has_enough_rows(&self) -> bool {
        self.n_samples() * self.n_outputs() >= self.c.ncols()
    }

    pub fn mask(&self) -> SensorMask {
        let mut m = SensorMask::empty(self.c.ncols());
        for row in self.c.row_iter() {
            if let Some(j) = row.iter().position(|&v| v == 1.0) {
                m.set(j, true);
            }
        }
        m
    }

    /// Writes `k,<sensor names…>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string()];
        header.extend(self.sensor_names.iter().cloned());
        w.write_record(&header)?;
        for (k, y) in self.y.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(y.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format of [`write_csv`](Self::write_csv); sensor names are
    /// resolved against the model's node names.
    pub fn read_csv<R: Read>(
        input: R,
        node_names: &[String],
        h: f64,
        scheme: Scheme,
    ) -> Result<Self, EstimationError> {
        let err = |m: String| EstimationError::Observations(m);
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
        if header.get(0) != Some("k") {
            return Err(err("first column must be 'k'".into()));
        }
        let sensor_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut c = DMatrix::zeros(sensor_names.len(), node_names.len());
        for (row, name) in sensor_names.iter().enumerate() {
            let j = node_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| err(format!("unknown sensor '{name}'")))?;
            c[(row, j)] = 1.0;
        }
        let mut y = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let k: usize = rec.get(0).unwrap_or("").trim().parse().map_err(|_| err(format!("bad index on data row {}", line + 1)))?;
            if k != y.len() {
                return Err(err(format!("sample indices must be 0, 1, …; found {k} on data row {}", line + 1)));
            }
            let vals: Result<Vec<f64>, _> = rec.iter().skip(1).map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| err(format!("data row {}: {e}", line + 1)))?;
            y.push(DVector::from_vec(vals));
        }
        ObservationSet::new(y, c, h, scheme, sensor_names)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSettings {
    pub gtol: f64,
    pub xtol: f64,
    pub max_iterations: usize,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        let tr = TrSettings::default();
        EstimatorSettings {
            gtol: tr.gtol,
            xtol: tr.xtol,
            max_iterations: tr.max_iterations,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimationProblem {
    pub observations: ObservationSet,
    pub dm: DiscreteModel,
    pub initial_guess: StateVector,
    pub settings: EstimatorSettings,
    /// Known initial state, for computing `η` in synthetic runs.
    pub truth: Option<StateVector>,
}

impl EstimationProblem {
    pub fn new(
        dm: DiscreteModel,
        observations: ObservationSet,
        initial_guess: StateVector,
    ) -> Result<Self, EstimationError> {
        let bad = |m: String| Err(EstimationError::Problem(m));
        let n = dm.dim();
        if observations.c.ncols() != n {
            return bad(format!("C has {} columns, model dimension is {n}", observations.c.ncols()));
        }
        if initial_guess.len() != n {
            return bad(format!("initial guess has {} entries, expected {n}", initial_guess.len()));
        }
        if !dm.model().contains(&initial_guess) {
            return bad("initial guess violates the model bounds".into());
        }
        if dm.h() != observations.h || dm.scheme() != observations.scheme {
            return bad("observation step size and scheme must match the discrete model".into());
        }
        Ok(EstimationProblem {
            observations,
            dm,
            initial_guess,
            settings: EstimatorSettings::default(),
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: StateVector) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn with_settings(mut self, settings: EstimatorSettings) -> Self {
        self.settings = settings;
        self
    }

    fn residual_of(&self, trajectory: &Trajectory) -> DVector<f64> {
        let obs = &self.observations;
        let r = obs.n_outputs();
        let mut g = DVector::zeros(obs.n_samples() * r);
        for (k, (y, x)) in obs.y.iter().zip(&trajectory.states).enumerate() {
            g.rows_mut(k * r, r).copy_from(&(y - &obs.c * x));
        }
        g
    }

    /// Residual and signed stack from one simulation.
    pub fn residual_and_stack(&self, x0: &StateVector) -> Result<(DVector<f64>, JacobianStack), EstimationError> {
        let tr = simulate(&self.dm, x0, self.observations.n_samples())?;
        let g = self.residual_of(&tr);
        let stack = stack_from_trajectory(&self.dm, tr, &OutputSpec::Matrix(self.observations.c.clone()), true)?;
        Ok((g, stack))
    }
}

impl LeastSquares for EstimationProblem {
    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>, String> {
        residual(self, x).map_err(|e| e.to_string())
    }

    fn residual_and_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), String> {
        self.residual_and_stack(x)
            .map(|(g, s)| (g, s.full))
            .map_err(|e| e.to_string())
    }
}

/// `g(x₀) = col(y_k − C x_k)`.
pub fn residual(problem: &EstimationProblem, x0: &StateVector) -> Result<DVector<f64>, EstimationError> {
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(EstimationError::Residual("state is not finite".into()));
    }
    let tr = simulate(&problem.dm, x0, problem.observations.n_samples())?;
    Ok(problem.residual_of(&tr))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankCheck {
    pub rank: usize,
    /// `σ_max / σ_min` over retained singular values.
    pub kappa: f64,
    pub ok: bool,
}

pub fn rank_of_matrix(j: &DMatrix<f64>) -> RankCheck {
    let n = j.ncols();
    let sv = singular_values(j);
    let smax = sv.first().copied().unwrap_or(0.0);
    let tol = j.nrows().max(n) as f64 * f64::EPSILON * smax;
    let retained: Vec<f64> = sv.into_iter().filter(|&s| s > tol && s > 0.0).collect();
    let rank = retained.len();
    let kappa = match retained.last() {
        Some(&smin) => smax / smin,
        None => f64::INFINITY,
    };
    RankCheck {
        rank,
        kappa,
        ok: rank == n,
    }
}

/// Numerical rank and condition number of a stacked Jacobian.
pub fn rank_check(stack: &JacobianStack) -> RankCheck {
    rank_of_matrix(&stack.full)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual_norm: f64,
    pub radius: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub x_hat: StateVector,
    pub eta: Option<f64>,
    /// Outer solver iterations `z`.
    pub iterations: usize,
    pub residual_norm: f64,
    pub kappa: f64,
    pub rank: usize,
    pub rank_ok: bool,
    pub converged: bool,
    pub stop_reason: String,
    pub trace: Vec<IterationRecord>,
}

impl EstimationResult {
    /// Writes `quantity,value` rows.
    pub fn write_report<W: Write>(&self, names: &[String], mut out: W) -> std::io::Result<()> {
        writeln!(out, "quantity,value")?;
        for (name, v) in names.iter().zip(self.x_hat.iter()) {
            writeln!(out, "x0_{name},{v:.16e}")?;
        }
        match self.eta {
            Some(eta) => writeln!(out, "eta,{eta:.16e}")?,
            None => writeln!(out, "eta,")?,
        }
        writeln!(out, "iterations,{}", self.iterations)?;
        writeln!(out, "kappa,{:.16e}", self.kappa)?;
        writeln!(out, "rank,{}", self.rank)?;
        writeln!(out, "rank_ok,{}", self.rank_ok)?;
        writeln!(out, "residual_norm,{:.16e}", self.residual_norm)?;
        writeln!(out, "converged,{}", self.converged)?;
        writeln!(out, "stop_reason,{}", self.stop_reason)?;
        Ok(())
    }
}

/// Bounded trust-region Gauss–Newton fit of the initial state.
pub fn estimate_initial_state(problem: &EstimationProblem) -> Result<EstimationResult, EstimationError> {
    let model = problem.dm.model();
    let settings = TrSettings {
        gtol: problem.settings.gtol,
        xtol: problem.settings.xtol,
        max_iterations: problem.settings.max_iterations,
        ..TrSettings::default()
    };
    let out = trust_region::solve(
        problem,
        &problem.initial_guess,
        model.lower_bounds(),
        model.upper_bounds(),
        &settings,
    )
    .map_err(EstimationError::Residual)?;
    let rc = rank_of_matrix(&out.jacobian);
    let eta = match &problem.truth {
        Some(t) => Some(estimation_error(&out.x, t)?),
        None => None,
    };
    let (converged, stop_reason) = match out.reason {
        StopReason::Gradient => (true, "gradient"),
        StopReason::StepSize => (true, "step"),
        StopReason::MaxIterations => (false, "max_iterations"),
    };
    Ok(EstimationResult {
        residual_norm: out.residual.norm(),
        x_hat: out.x,
        eta,
        iterations: out.iterations,
        kappa: rc.kappa,
        rank: rc.rank,
        rank_ok: rc.ok,
        converged,
        stop_reason: stop_reason.to_string(),
        trace: out
            .trace
            .into_iter()
            .map(|t| IterationRecord {
                iteration: t.iteration,
                residual_norm: t.residual_norm,
                radius: t.radius,
                step_norm: t.step_norm,
            })
            .collect(),
    })
}

/// `η = ‖x̂₀ − x₀‖₂ / ‖x₀‖₂`.
pub fn estimation_error(x_hat: &StateVector, x_true: &StateVector) -> Result<f64, EstimationError> {
    let denom = x_true.norm();
    if denom == 0.0 {
        return Err(EstimationError::ZeroTruth);
    }
    Ok((x_hat - x_true).norm() / denom)
}

/// `ξ_k = ‖x_k − x_k*‖₂ / ‖x_k*‖₂`; `None` where the reference state is zero.
pub fn trajectory_error(traj: &Trajectory, reference: &Trajectory) -> Result<Vec<Option<f64>>, EstimationError> {
    if traj.len() != reference.len() {
        return Err(EstimationError::Problem(format!(
            "trajectory lengths differ ({} vs {})",
            traj.len(),
            reference.len()
        )));
    }
    Ok(traj
        .states
        .iter()
        .zip(&reference.states)
        .map(|(x, r)| {
            let d = r.norm();
            (d > 0.0).then(|| (x - r).norm() / d)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearField;

    fn scalar_dm() -> DiscreteModel {
        let m = LinearField::model(DMatrix::from_element(1, 1, -1.0)).unwrap();
        DiscreteModel::new(m, Scheme::Be, 0.1).unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn hand_simulated_residual() {
        let dm = scalar_dm();
        let obs = ObservationSet::new(
            vec![v(&[1.0]), v(&[1.0 / 1.1])],
            DMatrix::identity(1, 1),
            0.1,
            Scheme::Be,
            vec!["x".into()],
        )
        .unwrap();
        let p = EstimationProblem::new(dm, obs, v(&[0.5])).unwrap();
        let g = residual(&p, &v(&[2.0])).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-15);
        assert!((g[1] + 1.0 / 1.1).abs() < 1e-13);
    }

    #[test]
    fn error_metrics() {
        let x = v(&[1.0, 1.0]);
        assert_eq!(estimation_error(&x, &x).unwrap(), 0.0);
        assert!((estimation_error(&(&x * 2.0), &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((estimation_error(&v(&[1.0, 0.0]), &x).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(estimation_error(&x, &v(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn rank_check_cases() {
        let rc = rank_of_matrix(&DMatrix::identity(3, 3));
        assert_eq!((rc.rank, rc.ok), (3, true));
        assert!((rc.kappa - 1.0).abs() < 1e-14);
        let mut z = DMatrix::identity(3, 3);
        z[(2, 2)] = 0.0;
        let rc = rank_of_matrix(&z);
        assert_eq!((rc.rank, rc.ok), (2, false));
        let wide = DMatrix::from_element(2, 3, 1.0);
        assert!(!rank_of_matrix(&wide).ok);
    }

    #[test]
    fn rejects_non_unit_rows() {
        let c = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert!(ObservationSet::new(vec![v(&[1.0])], c, 0.1, Scheme::Be, vec!["a".into()]).is_err());
    }

    #[test]
    fn observation_csv_round_trip() {
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let mask = SensorMask::from_indices(3, &[0, 2]).unwrap();
        let obs = ObservationSet::new(
            vec![v(&[1.0, 2.0]), v(&[0.1, 1.0 / 3.0])],
            mask.selection_matrix(),
            0.1,
            Scheme::Irk,
            vec!["a".into(), "c".into()],
        )
        .unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        let back = ObservationSet::read_csv(buf.as_slice(), &names, 0.1, Scheme::Irk).unwrap();
        assert_eq!(back, obs);
        assert_eq!(back.mask(), mask);
    }
}
