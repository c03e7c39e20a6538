//! Empirical observability Gramians.
//!
//! All three definitions integrate products of output trajectories from
//! perturbed initial states with the trapezoid rule on an equidistant grid of
//! `Q` segments of length `Δt`. Trajectories come from the IRK discretization
//! at step `Δt`.
//!
//! * Definition 1: initial states `c_m T_l e_i`, outputs taken about their
//!   long-run mean, weight `1/(v s c_m²)`.
//! * Definition 2: initial states `x₀ ± γ e_i`, weight `1/(4γ²)`.
//! * Definition 3: initial states `x₀ ± c_m T_l e_i`, weight `1/(4 v s c_m²)`.
//!
//! The `1/v` normalization in definitions 1 and 3 makes each of them equal to
//! the linear observability Gramian for linear dynamics; see
//! [`analytic_linear_gramian`].
//!
//! Every Gramian is a sum of per-output contributions. With `C = I` these are
//! per-node contributions, which is how masks are scored in
//! [`gramian_select`].

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::discretize::{count_simulations, simulate, DiscreteModel, Scheme, SimulationError};
use crate::linalg::{lu_solve_vec, sym_eigenvalues, write_matrix_csv};
use crate::model::{ContinuousModel, StateVector};
use crate::rng::{stream, Purpose};
use crate::selection::{
    search, GramDecomposition, MaskObjective, SearchStrategy, SelectionConstraints, SelectionError, SelectionResult,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GramianError {
    #[error("invalid Gramian configuration: {0}")]
    Config(String),
    #[error("simulation failed for perturbation (l = {l}, m = {m}, i = {i}, sign = {sign}): {source}")]
    Perturbation {
        l: usize,
        m: usize,
        i: usize,
        sign: i8,
        #[source]
        source: SimulationError,
    },
    #[error("the infinite-horizon Gramian needs a Hurwitz system matrix")]
    NotHurwitz,
    #[error("Lyapunov solve failed")]
    Lyapunov,
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Definition {
    One,
    Two,
    Three,
}

impl Definition {
    pub fn number(self) -> u8 {
        match self {
            Definition::One => 1,
            Definition::Two => 2,
            Definition::Three => 3,
        }
    }

    pub fn from_number(k: u8) -> Option<Self> {
        match k {
            1 => Some(Definition::One),
            2 => Some(Definition::Two),
            3 => Some(Definition::Three),
            _ => None,
        }
    }
}

/// How definition 1 approximates the long-run output mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanEstimate {
    /// The output at the end of the horizon.
    #[default]
    Terminal,
    /// The trapezoid average over `[0, τ]`.
    HorizonAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramianConfig {
    pub t_set: Vec<DMatrix<f64>>,
    pub m_set: Vec<f64>,
    pub gamma: f64,
    pub segments: usize,
    pub dt: f64,
    pub x0: StateVector,
    pub mean: MeanEstimate,
}

pub const DEFAULT_SCALES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_GAMMA: f64 = 0.5;

impl GramianConfig {
    /// Defaults: `𝓜 = {0.25, 0.5, 0.75, 1}`, `γ = 0.5`, `𝒯 = {I}`.
    pub fn new(x0: StateVector, dt: f64, segments: usize) -> Self {
        let n = x0.len();
        GramianConfig {
            t_set: vec![DMatrix::identity(n, n)],
            m_set: DEFAULT_SCALES.to_vec(),
            gamma: DEFAULT_GAMMA,
            segments,
            dt,
            x0,
            mean: MeanEstimate::Terminal,
        }
    }

    /// Replaces `𝒯` with `v` seeded random orthogonal matrices.
    pub fn with_random_orthogonal(mut self, v: usize, seed: u64) -> Self {
        self.t_set = random_orthogonal_set(self.x0.len(), v, seed);
        self
    }

    pub fn tau(&self) -> f64 {
        self.segments as f64 * self.dt
    }

    pub fn validate(&self, n: usize) -> Result<(), GramianError> {
        let bad = |m: String| Err(GramianError::Config(m));
        if self.x0.len() != n {
            return bad(format!("base state has {} entries, expected {n}", self.x0.len()));
        }
        if self.t_set.is_empty() || self.m_set.is_empty() {
            return bad("the orthogonal and scale sets must be nonempty".into());
        }
        for t in &self.t_set {
            if t.shape() != (n, n) {
                return bad("orthogonal matrices must be n x n".into());
            }
            let err = (t.transpose() * t - DMatrix::<f64>::identity(n, n)).norm();
            if err > 1e-10 {
                return bad(format!("matrix is not orthogonal (‖TᵀT − I‖ = {err:e})"));
            }
        }
        if self.m_set.iter().any(|&c| !(c > 0.0)) || !(self.gamma > 0.0) {
            return bad("perturbation scales must be positive".into());
        }
        if self.segments == 0 || !(self.dt > 0.0) {
            return bad("need at least one quadrature segment and a positive step".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalGramian {
    pub matrix: DMatrix<f64>,
    pub definition: Definition,
    /// Trajectory simulations used to build it.
    pub simulations: u64,
}

impl EmpiricalGramian {
    pub fn eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.matrix)
    }

    pub fn write_csv<W: Write>(&self, names: &[String], out: W) -> std::io::Result<()> {
        write_matrix_csv(&self.matrix, Some(names), out)
    }

    pub fn write_eigenvalues_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,eigenvalue")?;
        for (i, l) in self.eigenvalues().iter().enumerate() {
            writeln!(out, "{i},{l:.16e}")?;
        }
        Ok(())
    }
}

/// Trapezoid weights for `segments` intervals of width `dt`.
fn trapezoid_weights(segments: usize, dt: f64) -> Vec<f64> {
    (0..=segments)
        .map(|k| if k == 0 || k == segments { 0.5 * dt } else { dt })
        .collect()
}

struct Perturbation {
    l: usize,
    m: usize,
    i: usize,
    sign: i8,
    x0: StateVector,
}

fn clip_to_bounds(model: &ContinuousModel, x: StateVector, what: &Perturbation) -> StateVector {
    if model.contains(&x) {
        return x;
    }
    log::warn!(
        "perturbed state (l = {}, m = {}, i = {}, sign = {}) left the model bounds and was clipped",
        what.l,
        what.m,
        what.i,
        what.sign
    );
    model.project(&x)
}

/// Simulates every perturbation in parallel, returning the state trajectories
/// (each `(Q+1) × n`, row per sample) in input order and the simulation count.
fn run_perturbations(
    model: &ContinuousModel,
    dt: f64,
    segments: usize,
    perturbations: &[Perturbation],
) -> Result<(Vec<DMatrix<f64>>, u64), GramianError> {
    let dm = DiscreteModel::new(model.clone(), Scheme::Irk, dt).map_err(|e| GramianError::Config(e.to_string()))?;
    let runs: Vec<Result<(DMatrix<f64>, u64), GramianError>> = perturbations
        .par_iter()
        .map(|p| {
            let (res, count) = count_simulations(|| simulate(&dm, &p.x0, segments + 1));
            let tr = res.map_err(|source| GramianError::Perturbation {
                l: p.l,
                m: p.m,
                i: p.i,
                sign: p.sign,
                source,
            })?;
            let n = p.x0.len();
            let states = DMatrix::from_fn(segments + 1, n, |k, j| tr.states[k][j]);
            Ok((states, count))
        })
        .collect();
    let mut out = Vec::with_capacity(runs.len());
    let mut total = 0;
    for r in runs {
        let (s, c) = r?;
        out.push(s);
        total += c;
    }
    Ok((out, total))
}

/// Per-output quadrature of `Σ_t w_t F_tᵀ F_t` where `F_t` has one row per
/// output: returns one `n × n` matrix per row of `c`.
///
/// `columns[i]` is the `(Q+1) × n` state signal feeding column `i`.
fn per_output_products(columns: &[DMatrix<f64>], c: &DMatrix<f64>, weights: &[f64]) -> Vec<DMatrix<f64>> {
    let sqrt_w = DVector::from_iterator(weights.len(), weights.iter().map(|w| w.sqrt()));
    (0..c.nrows())
        .map(|o| {
            let c_row = c.row(o).transpose();
            let cols: Vec<DVector<f64>> = columns.iter().map(|col| (col * &c_row).component_mul(&sqrt_w)).collect();
            let sig = DMatrix::from_columns(&cols);
            sig.transpose() * sig
        })
        .collect()
}

fn check_output(c: &DMatrix<f64>, n: usize) -> Result<(), GramianError> {
    if c.ncols() != n {
        return Err(GramianError::Config(format!("output matrix has {} columns, expected {n}", c.ncols())));
    }
    Ok(())
}

/// Per-output contributions of definition 2.
fn def2_parts(model: &ContinuousModel, c: &DMatrix<f64>, cfg: &GramianConfig) -> Result<(Vec<DMatrix<f64>>, u64), GramianError> {
    let n = model.dim();
    cfg.validate(n)?;
    check_output(c, n)?;
    let mut perts = Vec::with_capacity(2 * n);
    for i in 0..n {
        for sign in [1i8, -1] {
            let mut x = cfg.x0.clone();
            x[i] += sign as f64 * cfg.gamma;
            let mut p = Perturbation { l: 0, m: 0, i, sign, x0: x };
            p.x0 = clip_to_bounds(model, p.x0.clone(), &p);
            perts.push(p);
        }
    }
    let (trajs, sims) = run_perturbations(model, cfg.dt, cfg.segments, &perts)?;
    let diffs: Vec<DMatrix<f64>> = (0..n).map(|i| &trajs[2 * i] - &trajs[2 * i + 1]).collect();
    let w = trapezoid_weights(cfg.segments, cfg.dt);
    let scale = 1.0 / (4.0 * cfg.gamma * cfg.gamma);
    let parts = per_output_products(&diffs, c, &w).into_iter().map(|p| p * scale).collect();
    Ok((parts, sims))
}

/// Per-output contributions of definition 3.
fn def3_parts(model: &ContinuousModel, c: &DMatrix<f64>, cfg: &GramianConfig) -> Result<(Vec<DMatrix<f64>>, u64), GramianError> {
    let n = model.dim();
    cfg.validate(n)?;
    check_output(c, n)?;
    let (v, s) = (cfg.t_set.len(), cfg.m_set.len());
    let mut perts = Vec::with_capacity(2 * n * v * s);
    for (l, t) in cfg.t_set.iter().enumerate() {
        for (m, &cm) in cfg.m_set.iter().enumerate() {
            for i in 0..n {
                for sign in [1i8, -1] {
                    let x = &cfg.x0 + t.column(i) * (sign as f64 * cm);
                    let mut p = Perturbation { l, m, i, sign, x0: x };
                    p.x0 = clip_to_bounds(model, p.x0.clone(), &p);
                    perts.push(p);
                }
            }
        }
    }
    let (trajs, sims) = run_perturbations(model, cfg.dt, cfg.segments, &perts)?;
    let w = trapezoid_weights(cfg.segments, cfg.dt);
    let mut parts = vec![DMatrix::zeros(n, n); c.nrows()];
    for (l, t) in cfg.t_set.iter().enumerate() {
        for (m, &cm) in cfg.m_set.iter().enumerate() {
            let base = (l * s + m) * 2 * n;
            let diffs: Vec<DMatrix<f64>> = (0..n).map(|i| &trajs[base + 2 * i] - &trajs[base + 2 * i + 1]).collect();
            let scale = 1.0 / (4.0 * v as f64 * s as f64 * cm * cm);
            for (acc, p) in parts.iter_mut().zip(per_output_products(&diffs, c, &w)) {
                *acc += t * p * t.transpose() * scale;
            }
        }
    }
    Ok((parts, sims))
}

/// Per-output contributions of definition 1.
fn def1_parts(model: &ContinuousModel, c: &DMatrix<f64>, cfg: &GramianConfig) -> Result<(Vec<DMatrix<f64>>, u64), GramianError> {
    let n = model.dim();
    cfg.validate(n)?;
    check_output(c, n)?;
    let (v, s) = (cfg.t_set.len(), cfg.m_set.len());
    let mut perts = Vec::with_capacity(n * v * s);
    for (l, t) in cfg.t_set.iter().enumerate() {
        for (m, &cm) in cfg.m_set.iter().enumerate() {
            for i in 0..n {
                let x: StateVector = t.column(i) * cm;
                let mut p = Perturbation { l, m, i, sign: 1, x0: x };
                p.x0 = clip_to_bounds(model, p.x0.clone(), &p);
                perts.push(p);
            }
        }
    }
    let (trajs, sims) = run_perturbations(model, cfg.dt, cfg.segments, &perts)?;
    let w = trapezoid_weights(cfg.segments, cfg.dt);
    let tau = cfg.tau();
    let centered: Vec<DMatrix<f64>> = trajs
        .into_iter()
        .map(|tr| {
            let mean: DVector<f64> = match cfg.mean {
                MeanEstimate::Terminal => tr.row(cfg.segments).transpose(),
                MeanEstimate::HorizonAverage => {
                    let mut acc = DVector::zeros(n);
                    for (k, wk) in w.iter().enumerate() {
                        acc += tr.row(k).transpose() * *wk;
                    }
                    acc / tau
                }
            };
            DMatrix::from_fn(tr.nrows(), n, |k, j| tr[(k, j)] - mean[j])
        })
        .collect();
    let mut parts = vec![DMatrix::zeros(n, n); c.nrows()];
    for (l, t) in cfg.t_set.iter().enumerate() {
        for (m, &cm) in cfg.m_set.iter().enumerate() {
            let base = (l * s + m) * n;
            let scale = 1.0 / (v as f64 * s as f64 * cm * cm);
            for (acc, p) in parts.iter_mut().zip(per_output_products(&centered[base..base + n], c, &w)) {
                *acc += t * p * t.transpose() * scale;
            }
        }
    }
    Ok((parts, sims))
}

fn parts_for(
    definition: Definition,
    model: &ContinuousModel,
    c: &DMatrix<f64>,
    cfg: &GramianConfig,
) -> Result<(Vec<DMatrix<f64>>, u64), GramianError> {
    match definition {
        Definition::One => def1_parts(model, c, cfg),
        Definition::Two => def2_parts(model, c, cfg),
        Definition::Three => def3_parts(model, c, cfg),
    }
}

fn assemble(definition: Definition, n: usize, (parts, simulations): (Vec<DMatrix<f64>>, u64)) -> EmpiricalGramian {
    let mut matrix = DMatrix::zeros(n, n);
    for p in parts {
        matrix += p;
    }
    let matrix = (&matrix + matrix.transpose()) * 0.5;
    EmpiricalGramian {
        matrix,
        definition,
        simulations,
    }
}

pub fn empirical_gramian(
    definition: Definition,
    model: &ContinuousModel,
    c: &DMatrix<f64>,
    cfg: &GramianConfig,
) -> Result<EmpiricalGramian, GramianError> {
    Ok(assemble(definition, model.dim(), parts_for(definition, model, c, cfg)?))
}

pub fn gramian_def1(model: &ContinuousModel, c: &DMatrix<f64>, cfg: &GramianConfig) -> Result<EmpiricalGramian, GramianError> {
    empirical_gramian(Definition::One, model, c, cfg)
}

pub fn gramian_def2(model: &ContinuousModel, c: &DMatrix<f64>, cfg: &GramianConfig) -> Result<EmpiricalGramian, GramianError> {
    empirical_gramian(Definition::Two, model, c, cfg)
}

pub fn gramian_def3(model: &ContinuousModel, c: &DMatrix<f64>, cfg: &GramianConfig) -> Result<EmpiricalGramian, GramianError> {
    empirical_gramian(Definition::Three, model, c, cfg)
}

/// Per-node contributions with full-state outputs, for scoring masks.
pub fn gramian_decomposition(
    definition: Definition,
    model: &ContinuousModel,
    cfg: &GramianConfig,
) -> Result<(GramDecomposition, u64), GramianError> {
    let n = model.dim();
    let (parts, sims) = parts_for(definition, model, &DMatrix::identity(n, n), cfg)?;
    let parts = parts.into_iter().map(|p| (&p + p.transpose()) * 0.5).collect();
    Ok((GramDecomposition { parts }, sims))
}

/// Chooses the mask maximizing `log det X̂(b)`.
pub fn gramian_select(
    model: &ContinuousModel,
    cfg: &GramianConfig,
    constraints: &SelectionConstraints,
    definition: Definition,
    strategy: SearchStrategy,
) -> Result<SelectionResult, GramianError> {
    let (objective, _) = gramian_decomposition(definition, model, cfg)?;
    debug_assert_eq!(objective.dim(), model.dim());
    Ok(search(&objective, constraints, strategy)?)
}

/// `v` seeded random orthogonal matrices from QR of standard normal matrices,
/// with the signs of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal_set(n: usize, v: usize, seed: u64) -> Vec<DMatrix<f64>> {
    (0..v)
        .map(|l| {
            let mut rng = stream(seed, Purpose::Orthogonal, l as u64);
            let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
            let qr = g.qr();
            let r = qr.r();
            let mut q = qr.q();
            for j in 0..n {
                if r[(j, j)] < 0.0 {
                    q.column_mut(j).neg_mut();
                }
            }
            q
        })
        .collect()
}

/// `∫₀^τ exp(Aᵀt) CᵀC exp(At) dt`.
///
/// Finite horizons use composite Simpson quadrature on powers of `exp(Aδ)`;
/// `τ = ∞` solves the Lyapunov equation `AᵀW + WA + CᵀC = 0`.
pub fn analytic_linear_gramian(a: &DMatrix<f64>, c: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>, GramianError> {
    let n = a.nrows();
    if a.ncols() != n || c.ncols() != n {
        return Err(GramianError::Config("dimension mismatch between A and C".into()));
    }
    let ctc = c.transpose() * c;
    if tau.is_infinite() {
        let hurwitz = a.complex_eigenvalues().iter().all(|l| l.re < 0.0);
        if !hurwitz {
            return Err(GramianError::NotHurwitz);
        }
        let eye = DMatrix::<f64>::identity(n, n);
        let at = a.transpose();
        let k = eye.kronecker(&at) + at.kronecker(&eye);
        let rhs = DVector::from_iterator(n * n, ctc.iter().map(|v| -v));
        let w = lu_solve_vec(&k, &rhs).map_err(|_| GramianError::Lyapunov)?;
        let w = DMatrix::from_column_slice(n, n, w.as_slice());
        return Ok((&w + w.transpose()) * 0.5);
    }
    if !(tau >= 0.0) {
        return Err(GramianError::Config(format!("horizon must be non-negative, got {tau}")));
    }
    if tau == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let norm = a.norm().max(1e-12);
    let mut intervals = ((tau * norm * 400.0).ceil() as usize).max(2000);
    intervals += intervals % 2;
    let delta = tau / intervals as f64;
    let step = (a * delta).exp();
    let mut e = DMatrix::<f64>::identity(n, n);
    let mut acc = DMatrix::zeros(n, n);
    for k in 0..=intervals {
        let w = if k == 0 || k == intervals {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += e.transpose() * &ctc * &e * w;
        e = &e * &step;
    }
    let acc = acc * (delta / 3.0);
    Ok((&acc + acc.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearField;
    use std::f64::consts::PI;

    #[test]
    fn analytic_examples() {
        let w = analytic_linear_gramian(&DMatrix::from_element(1, 1, -1.0), &DMatrix::from_element(1, 1, 1.0), f64::INFINITY).unwrap();
        assert!((w[(0, 0)] - 0.5).abs() < 1e-14);
        let w = analytic_linear_gramian(&-DMatrix::identity(2, 2), &DMatrix::identity(2, 2), f64::INFINITY).unwrap();
        assert!((w - DMatrix::identity(2, 2) * 0.5).amax() < 1e-14);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let w = analytic_linear_gramian(&rot, &c, 2.0 * PI).unwrap();
        assert!((w - DMatrix::identity(2, 2) * PI).amax() < 1e-9);
        assert_eq!(analytic_linear_gramian(&rot, &c, f64::INFINITY), Err(GramianError::NotHurwitz));
    }

    #[test]
    fn orthogonal_set_properties() {
        let one = random_orthogonal_set(1, 3, 5);
        assert!(one.iter().all(|q| q[(0, 0)].abs() == 1.0));
        for q in random_orthogonal_set(4, 2, 9) {
            assert!((q.transpose() * &q - DMatrix::<f64>::identity(4, 4)).amax() < 1e-12);
        }
        assert_ne!(random_orthogonal_set(3, 1, 1), random_orthogonal_set(3, 1, 2));
    }

    #[test]
    fn scalar_decay_gramians() {
        let m = LinearField::model(DMatrix::from_element(1, 1, -1.0)).unwrap();
        let c = DMatrix::from_element(1, 1, 1.0);
        let mut cfg = GramianConfig::new(DVector::from_element(1, 1.0), 1e-3, 20_000);
        cfg.m_set = vec![1.0];
        let g1 = gramian_def1(&m, &c, &cfg).unwrap();
        assert!((g1.matrix[(0, 0)] - 0.5).abs() < 0.01);
        let g2 = gramian_def2(&m, &c, &cfg).unwrap();
        assert!((g2.matrix[(0, 0)] - 0.5).abs() < 1e-6);
        let zero = gramian_def2(&m, &DMatrix::zeros(1, 1), &cfg).unwrap();
        assert_eq!(zero.matrix[(0, 0)], 0.0);
    }

    #[test]
    fn def3_collapses_to_def2() {
        let m = LinearField::model(DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -0.5])).unwrap();
        let c = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let mut cfg = GramianConfig::new(DVector::from_vec(vec![0.2, 0.4]), 0.01, 500);
        cfg.m_set = vec![cfg.gamma];
        let g2 = gramian_def2(&m, &c, &cfg).unwrap();
        let g3 = gramian_def3(&m, &c, &cfg).unwrap();
        assert!((g2.matrix - g3.matrix).amax() < 1e-12);
        assert_eq!(g2.simulations, 4);
        assert_eq!(g3.simulations, 4);
    }
}
