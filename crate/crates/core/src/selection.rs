//! Sensor placement by log-determinant maximization.
//!
//! A mask `b` selects which nodes are measured. The Jacobian objective is
//! `log det(J¹ᵀJ¹)` with `J¹ = (I_N ⊗ diag(b)) J²`. Because
//! `J¹ᵀJ¹ = Σ_i b_i G_i` with `G_i = Σ_k P_k[i,:]ᵀ P_k[i,:]`, a single
//! simulation yields per-node contributions from which every mask is scored;
//! [`GramDecomposition`] holds them and is shared with the Gramian methods.
//!
//! Masks whose Gram matrix has eigenvalues at or below `n·ε·λ_max` are
//! degenerate. They score `−∞`, and among themselves they are ranked by the
//! number of retained eigenvalues and then by the sum of their logs.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::DiscreteModel;
use crate::linalg::LogDet;
use crate::model::StateVector;
use crate::rng::{stream, Purpose};
use crate::sensitivity::{stack_output_jacobian, OutputSpec, SensitivityError};

pub const EXHAUSTIVE_BUDGET: u128 = 1_000_000;
pub const STOCHASTIC_STARTS: usize = 5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SelectionError {
    #[error("infeasible selection constraints: {0}")]
    Infeasible(String),
    #[error("exhaustive search over {count} masks exceeds the budget of {budget}")]
    Budget { count: u128, budget: u128 },
    #[error("invalid mask: {0}")]
    Mask(String),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error("objective evaluation failed: {0}")]
    Evaluation(String),
}

/// Binary sensor mask over `n` nodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SensorMask {
    bits: Vec<bool>,
}

impl SensorMask {
    pub fn new(bits: Vec<bool>) -> Self {
        SensorMask { bits }
    }

    pub fn empty(n: usize) -> Self {
        SensorMask { bits: vec![false; n] }
    }

    pub fn full(n: usize) -> Self {
        SensorMask { bits: vec![true; n] }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self, SelectionError> {
        let mut bits = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(SelectionError::Mask(format!("node {i} out of range for n = {n}")));
            }
            bits[i] = true;
        }
        Ok(SensorMask { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of sensors `r`.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.bits[i] = on;
    }

    pub fn with(&self, i: usize) -> Self {
        let mut m = self.clone();
        m.bits[i] = true;
        m
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }

    /// `r × n` matrix with a unit row per selected node, in node order.
    pub fn selection_matrix(&self) -> DMatrix<f64> {
        let idx = self.indices();
        let mut c = DMatrix::zeros(idx.len(), self.bits.len());
        for (row, &i) in idx.iter().enumerate() {
            c[(row, i)] = 1.0;
        }
        c
    }

    /// `diag(b)`.
    pub fn diag_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.bits.len(), self.bits.len(), |i, j| {
            if i == j && self.bits[i] {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Fraction of measured nodes `r / n`.
    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Cardinality and membership constraints on a mask.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionConstraints {
    pub r: usize,
    #[serde(default)]
    pub forced: BTreeSet<usize>,
    #[serde(default)]
    pub excluded: BTreeSet<usize>,
    /// Node groups that must each contain at least one sensor.
    #[serde(default)]
    pub cover_groups: Vec<Vec<usize>>,
}

impl SelectionConstraints {
    pub fn with_count(r: usize) -> Self {
        SelectionConstraints {
            r,
            ..Default::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), SelectionError> {
        let bad = |m: String| Err(SelectionError::Infeasible(m));
        if let Some(&i) = self.forced.iter().chain(&self.excluded).find(|&&i| i >= n) {
            return bad(format!("node {i} out of range for n = {n}"));
        }
        if let Some(i) = self.forced.intersection(&self.excluded).next() {
            return bad(format!("node {i} is both forced and excluded"));
        }
        if self.forced.len() > self.r {
            return bad(format!("{} forced nodes exceed r = {}", self.forced.len(), self.r));
        }
        if self.r > n - self.excluded.len() {
            return bad(format!(
                "r = {} exceeds the {} selectable nodes",
                self.r,
                n - self.excluded.len()
            ));
        }
        let mut needed = 0;
        for g in &self.cover_groups {
            if g.iter().any(|&i| i >= n) {
                return bad("cover group references a node out of range".into());
            }
            if g.iter().any(|i| self.forced.contains(i)) {
                continue;
            }
            if g.iter().all(|i| self.excluded.contains(i)) {
                return bad(format!("cover group {g:?} has no selectable node"));
            }
            needed += 1;
        }
        if self.forced.len() + needed > self.r {
            return bad(format!(
                "r = {} cannot cover {} forced nodes and {} uncovered groups",
                self.r,
                self.forced.len(),
                needed
            ));
        }
        Ok(())
    }

    /// Nodes that are neither forced nor excluded.
    pub fn free_nodes(&self, n: usize) -> Vec<usize> {
        (0..n)
            .filter(|i| !self.forced.contains(i) && !self.excluded.contains(i))
            .collect()
    }

    fn uncovered_groups(&self, mask: &SensorMask) -> usize {
        self.cover_groups
            .iter()
            .filter(|g| !g.iter().any(|&i| mask.contains(i)))
            .count()
    }

    pub fn is_satisfied_by(&self, mask: &SensorMask) -> bool {
        mask.count() == self.r
            && self.forced.iter().all(|&i| mask.contains(i))
            && self.excluded.iter().all(|&i| !mask.contains(i))
            && self.uncovered_groups(mask) == 0
    }

    pub fn forced_mask(&self, n: usize) -> SensorMask {
        let mut m = SensorMask::empty(n);
        for &i in &self.forced {
            m.set(i, true);
        }
        m
    }
}

/// Log-determinant score of a mask with the degenerate-aware ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub logdet: LogDet,
}

impl ObjectiveValue {
    /// `log det`, or `−∞` when degenerate.
    pub fn value(&self) -> f64 {
        self.logdet.value()
    }

    pub fn is_degenerate(&self) -> bool {
        self.logdet.is_degenerate()
    }

    /// Total order: non-degenerate beats degenerate; degenerate values compare
    /// by retained eigenvalue count, then retained log-sum.
    pub fn compare(&self, other: &Self) -> Ordering {
        match (self.is_degenerate(), other.is_degenerate()) {
            (false, false) => self.value().total_cmp(&other.value()),
            (false, true) => Ordering::Greater,
            (true, false) => Ordering::Less,
            (true, true) => self
                .logdet
                .retained
                .cmp(&other.logdet.retained)
                .then(self.logdet.retained_log_sum.total_cmp(&other.logdet.retained_log_sum)),
        }
    }

    pub fn of_gram(gram: &DMatrix<f64>) -> Self {
        ObjectiveValue {
            logdet: LogDet::of_psd(gram),
        }
    }
}

/// A score over masks; higher is better.
pub trait MaskObjective: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, mask: &SensorMask) -> Result<ObjectiveValue, SelectionError>;
}

/// Gram matrix split into per-node contributions: `G(b) = Σ_i b_i G_i`.
#[derive(Debug, Clone)]
pub struct GramDecomposition {
    pub parts: Vec<DMatrix<f64>>,
}

impl GramDecomposition {
    /// Per-node contributions of the mask-free stack `J²` (`(N·n) × n`).
    pub fn from_j2(j2: &DMatrix<f64>) -> Self {
        let n = j2.ncols();
        let n_samples = j2.nrows() / n;
        let mut parts = vec![DMatrix::zeros(n, n); n];
        for k in 0..n_samples {
            for (i, part) in parts.iter_mut().enumerate() {
                let row = j2.row(k * n + i);
                *part += row.transpose() * row;
            }
        }
        GramDecomposition { parts }
    }

    pub fn gram(&self, mask: &SensorMask) -> DMatrix<f64> {
        let n = self.parts.first().map_or(0, |p| p.nrows());
        let mut g = DMatrix::zeros(n, n);
        for i in mask.indices() {
            g += &self.parts[i];
        }
        g
    }
}

impl MaskObjective for GramDecomposition {
    fn dim(&self) -> usize {
        self.parts.len()
    }

    fn evaluate(&self, mask: &SensorMask) -> Result<ObjectiveValue, SelectionError> {
        if mask.len() != self.parts.len() {
            return Err(SelectionError::Mask(format!(
                "mask has {} entries, expected {}",
                mask.len(),
                self.parts.len()
            )));
        }
        Ok(ObjectiveValue::of_gram(&self.gram(mask)))
    }
}

/// Jacobian objective with the stack built once at `x0`.
#[derive(Debug, Clone)]
pub struct JacobianObjective {
    pub decomposition: GramDecomposition,
}

impl JacobianObjective {
    pub fn new(dm: &DiscreteModel, x0: &StateVector, n_samples: usize) -> Result<Self, SelectionError> {
        let n = dm.dim();
        let stack = stack_output_jacobian(dm, x0, n_samples, &OutputSpec::Mask(SensorMask::full(n)), false)?;
        Ok(JacobianObjective {
            decomposition: GramDecomposition::from_j2(&stack.j2),
        })
    }
}

impl MaskObjective for JacobianObjective {
    fn dim(&self) -> usize {
        self.decomposition.dim()
    }

    fn evaluate(&self, mask: &SensorMask) -> Result<ObjectiveValue, SelectionError> {
        self.decomposition.evaluate(mask)
    }
}

/// `log det(J¹ᵀJ¹)` for one mask; performs one simulation.
pub fn selection_objective(
    dm: &DiscreteModel,
    x0: &StateVector,
    n_samples: usize,
    mask: &SensorMask,
) -> Result<ObjectiveValue, SelectionError> {
    if mask.len() != dm.dim() {
        return Err(SelectionError::Mask(format!("mask has {} entries, expected {}", mask.len(), dm.dim())));
    }
    let stack = stack_output_jacobian(dm, x0, n_samples, &OutputSpec::Mask(mask.clone()), false)?;
    let gram = stack.full.transpose() * &stack.full;
    Ok(ObjectiveValue::of_gram(&gram))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Exhaustive,
    Greedy,
    Stochastic,
    Random,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Solver::Exhaustive => "exhaustive",
            Solver::Greedy => "greedy",
            Solver::Stochastic => "stochastic",
            Solver::Random => "random",
        }
    }
}

impl std::str::FromStr for Solver {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exhaustive" => Ok(Solver::Exhaustive),
            "greedy" => Ok(Solver::Greedy),
            "stochastic" => Ok(Solver::Stochastic),
            "random" => Ok(Solver::Random),
            other => Err(format!("unknown solver '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub mask: SensorMask,
    /// `log det` of the selected Gram matrix (maximized), `−∞` if degenerate.
    pub objective: f64,
    pub value: ObjectiveValue,
    /// Number of candidate masks scored by the solver.
    pub evaluations: usize,
    pub solver: Solver,
    pub seed: Option<u64>,
    /// Best objective after each accepted move or greedy addition.
    pub trace: Vec<f64>,
}

impl SelectionResult {
    pub fn new(mask: SensorMask, value: ObjectiveValue, evaluations: usize, solver: Solver) -> Self {
        SelectionResult {
            mask,
            objective: value.value(),
            value,
            evaluations,
            solver,
            seed: None,
            trace: Vec::new(),
        }
    }

    pub fn degenerate(&self) -> bool {
        self.value.is_degenerate()
    }
}

/// Scores candidates in parallel; returns the first best in candidate order.
fn best_of(
    objective: &dyn MaskObjective,
    candidates: &[SensorMask],
) -> Result<Option<(usize, ObjectiveValue)>, SelectionError> {
    let values: Vec<Result<ObjectiveValue, SelectionError>> =
        candidates.par_iter().map(|m| objective.evaluate(m)).collect();
    let mut best: Option<(usize, ObjectiveValue)> = None;
    for (i, v) in values.into_iter().enumerate() {
        let v = v?;
        if best.as_ref().is_none_or(|(_, b)| v.compare(b) == Ordering::Greater) {
            best = Some((i, v));
        }
    }
    Ok(best)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// Visits the `k`-subsets of `items` in lexicographic order.
fn for_each_combination(items: &[usize], k: usize, mut f: impl FnMut(&[usize])) {
    let n = items.len();
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut chosen = vec![0; k];
    loop {
        for (c, &i) in chosen.iter_mut().zip(&idx) {
            *c = items[i];
        }
        f(&chosen);
        let mut pos = k;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            if idx[pos] != pos + n - k {
                break;
            }
            if pos == 0 {
                return;
            }
        }
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Scores every feasible mask; ties go to the lexicographically smallest
/// index set.
pub fn select_exhaustive(
    objective: &dyn MaskObjective,
    constraints: &SelectionConstraints,
) -> Result<SelectionResult, SelectionError> {
    let n = objective.dim();
    constraints.validate(n)?;
    let free = constraints.free_nodes(n);
    let k = constraints.r - constraints.forced.len();
    let count = binomial(free.len(), k);
    if count > EXHAUSTIVE_BUDGET {
        return Err(SelectionError::Budget {
            count,
            budget: EXHAUSTIVE_BUDGET,
        });
    }
    let base = constraints.forced_mask(n);
    let mut candidates = Vec::with_capacity(count as usize);
    for_each_combination(&free, k, |chosen| {
        let mut m = base.clone();
        for &i in chosen {
            m.set(i, true);
        }
        if constraints.uncovered_groups(&m) == 0 {
            candidates.push(m);
        }
    });
    let evaluations = candidates.len();
    let (i, value) = best_of(objective, &candidates)?
        .ok_or_else(|| SelectionError::Infeasible("no mask satisfies the constraints".into()))?;
    Ok(SelectionResult::new(candidates.swap_remove(i), value, evaluations, Solver::Exhaustive))
}

/// Adds one sensor at a time, maximizing the objective of the grown set.
pub fn select_greedy(
    objective: &dyn MaskObjective,
    constraints: &SelectionConstraints,
) -> Result<SelectionResult, SelectionError> {
    let n = objective.dim();
    constraints.validate(n)?;
    let mut mask = constraints.forced_mask(n);
    let mut evaluations = 0;
    let mut trace = Vec::new();
    let mut current = None;
    while mask.count() < constraints.r {
        let slots_after = constraints.r - mask.count() - 1;
        let candidates: Vec<SensorMask> = (0..n)
            .filter(|&a| !mask.contains(a) && !constraints.excluded.contains(&a))
            .map(|a| mask.with(a))
            .filter(|m| constraints.uncovered_groups(m) <= slots_after)
            .collect();
        evaluations += candidates.len();
        let (i, value) = best_of(objective, &candidates)?
            .ok_or_else(|| SelectionError::Infeasible("no admissible node to add".into()))?;
        mask = candidates[i].clone();
        trace.push(value.value());
        current = Some(value);
    }
    let value = match current {
        Some(v) => v,
        None => objective.evaluate(&mask)?,
    };
    let mut result = SelectionResult::new(mask, value, evaluations, Solver::Greedy);
    result.trace = trace;
    Ok(result)
}

/// Uniform random mask satisfying the constraints.
pub fn random_mask<R: Rng + ?Sized>(
    n: usize,
    constraints: &SelectionConstraints,
    rng: &mut R,
) -> Result<SensorMask, SelectionError> {
    constraints.validate(n)?;
    let free = constraints.free_nodes(n);
    let k = constraints.r - constraints.forced.len();
    let base = constraints.forced_mask(n);
    // rejection keeps the draw uniform over masks that cover every group
    for _ in 0..100_000 {
        let mut m = base.clone();
        for &i in free.choose_multiple(rng, k) {
            m.set(i, true);
        }
        if constraints.uncovered_groups(&m) == 0 {
            return Ok(m);
        }
    }
    Err(SelectionError::Infeasible(
        "could not draw a mask covering every group".into(),
    ))
}

pub fn random_selection(n: usize, constraints: &SelectionConstraints, seed: u64) -> Result<SensorMask, SelectionError> {
    random_mask(n, constraints, &mut stream(seed, Purpose::RandomMask, 0))
}

/// Multi-start single-swap hill climbing.
///
/// Five seeded random feasible masks are scored first. Starting from each in
/// turn, swaps of one selected free node with one unselected free node are
/// proposed in a seeded random order and the first improving swap is taken,
/// until no swap improves or `budget` swap evaluations have been spent.
pub fn select_stochastic(
    objective: &dyn MaskObjective,
    constraints: &SelectionConstraints,
    budget: usize,
    seed: u64,
) -> Result<SelectionResult, SelectionError> {
    let n = objective.dim();
    constraints.validate(n)?;
    if budget == 0 {
        return Err(SelectionError::Infeasible("evaluation budget must be at least 1".into()));
    }
    let mut rng = stream(seed, Purpose::Selection, 0);
    let starts: Vec<SensorMask> = (0..STOCHASTIC_STARTS)
        .map(|_| random_mask(n, constraints, &mut rng))
        .collect::<Result<_, _>>()?;
    let start_values: Vec<ObjectiveValue> = starts.iter().map(|m| objective.evaluate(m)).collect::<Result<_, _>>()?;
    let mut evaluations = starts.len();
    let mut best_idx = 0;
    for i in 1..starts.len() {
        if start_values[i].compare(&start_values[best_idx]) == Ordering::Greater {
            best_idx = i;
        }
    }
    let mut best = (starts[best_idx].clone(), start_values[best_idx].clone());
    let mut trace = vec![best.1.value()];
    let mut spent = 0;
    'starts: for (mut mask, mut value) in starts.into_iter().zip(start_values) {
        loop {
            let selected: Vec<usize> = mask.indices().into_iter().filter(|i| !constraints.forced.contains(i)).collect();
            let unselected: Vec<usize> = (0..n)
                .filter(|&i| !mask.contains(i) && !constraints.excluded.contains(&i))
                .collect();
            let mut moves: Vec<(usize, usize)> = selected
                .iter()
                .flat_map(|&i| unselected.iter().map(move |&j| (i, j)))
                .collect();
            moves.shuffle(&mut rng);
            let mut improved = false;
            for (i, j) in moves {
                let mut cand = mask.clone();
                cand.set(i, false);
                cand.set(j, true);
                if constraints.uncovered_groups(&cand) > 0 {
                    continue;
                }
                if spent == budget {
                    break 'starts;
                }
                spent += 1;
                evaluations += 1;
                let v = objective.evaluate(&cand)?;
                if v.compare(&value) == Ordering::Greater {
                    mask = cand;
                    value = v;
                    improved = true;
                    break;
                }
            }
            if value.compare(&best.1) == Ordering::Greater {
                best = (mask.clone(), value.clone());
                trace.push(best.1.value());
            }
            if !improved {
                break;
            }
        }
    }
    let mut result = SelectionResult::new(best.0, best.1, evaluations, Solver::Stochastic);
    result.seed = Some(seed);
    result.trace = trace;
    Ok(result)
}

/// Which discrete search to run on a [`MaskObjective`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStrategy {
    Exhaustive,
    Greedy,
    Stochastic { budget: usize, seed: u64 },
}

pub fn search(
    objective: &dyn MaskObjective,
    constraints: &SelectionConstraints,
    strategy: SearchStrategy,
) -> Result<SelectionResult, SelectionError> {
    match strategy {
        SearchStrategy::Exhaustive => select_exhaustive(objective, constraints),
        SearchStrategy::Greedy => select_greedy(objective, constraints),
        SearchStrategy::Stochastic { budget, seed } => select_stochastic(objective, constraints, budget, seed),
    }
}

/// Writes `solver,seed,objective,evaluations,degenerate,<node columns>`.
pub fn write_selection_csv<W: Write>(
    results: &[SelectionResult],
    names: &[String],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "solver".to_string(),
        "seed".into(),
        "objective".into(),
        "evaluations".into(),
        "degenerate".into(),
    ];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for r in results {
        let mut row = vec![
            r.solver.as_str().to_string(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            format!("{:.16e}", r.objective),
            r.evaluations.to_string(),
            r.degenerate().to_string(),
        ];
        row.extend(r.mask.bits().iter().map(|&b| if b { "1" } else { "0" }.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::Scheme;
    use crate::model::LinearField;
    use nalgebra::DVector;

    fn diag_dm() -> DiscreteModel {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        DiscreteModel::new(LinearField::model(a).unwrap(), Scheme::Be, 0.1).unwrap()
    }

    #[test]
    fn full_mask_single_sample_is_zero() {
        let dm = diag_dm();
        let v = selection_objective(&dm, &DVector::from_vec(vec![1.0, 1.0]), 1, &SensorMask::full(2)).unwrap();
        assert!(v.value().abs() < 1e-14);
    }

    #[test]
    fn too_few_rows_is_degenerate() {
        let dm = diag_dm();
        let m = SensorMask::from_indices(2, &[0]).unwrap();
        let v = selection_objective(&dm, &DVector::from_vec(vec![1.0, 1.0]), 1, &m).unwrap();
        assert!(v.is_degenerate());
        assert_eq!(v.value(), f64::NEG_INFINITY);
    }

    #[test]
    fn decomposition_matches_direct_objective() {
        let dm = diag_dm();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let obj = JacobianObjective::new(&dm, &x0, 5).unwrap();
        let direct = selection_objective(&dm, &x0, 5, &SensorMask::full(2)).unwrap();
        let fast = obj.evaluate(&SensorMask::full(2)).unwrap();
        assert!((direct.value() - fast.value()).abs() < 1e-12);
    }

    #[test]
    fn combinations_are_lexicographic() {
        let mut seen = Vec::new();
        for_each_combination(&[1, 3, 5, 7], 2, |c| seen.push(c.to_vec()));
        assert_eq!(seen, vec![vec![1, 3], vec![1, 5], vec![1, 7], vec![3, 5], vec![3, 7], vec![5, 7]]);
        let mut count = 0;
        for_each_combination(&[0, 1, 2], 0, |c| {
            assert!(c.is_empty());
            count += 1
        });
        assert_eq!(count, 1);
        assert_eq!(binomial(9, 4), 126);
    }

    #[test]
    fn constraints_validation() {
        let mut c = SelectionConstraints::with_count(2);
        c.forced.insert(0);
        c.excluded.insert(0);
        assert!(c.validate(3).is_err());
        let mut c = SelectionConstraints::with_count(1);
        c.cover_groups = vec![vec![0], vec![1]];
        assert!(c.validate(3).is_err());
        assert!(SelectionConstraints::with_count(4).validate(3).is_err());
    }

    #[test]
    fn selection_matrix_rows_are_units() {
        let m = SensorMask::from_indices(4, &[3, 1]).unwrap();
        let c = m.selection_matrix();
        assert_eq!(c.nrows(), 2);
        assert_eq!(c[(0, 1)], 1.0);
        assert_eq!(c[(1, 3)], 1.0);
        assert_eq!(c.sum(), 2.0);
        assert_eq!(m.to_bit_string(), "0101");
    }
}
