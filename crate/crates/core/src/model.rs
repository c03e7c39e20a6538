//! Continuous-time network models `ẋ = q(x)` with analytic Jacobians.
//!
//! A [`ContinuousModel`] couples a [`VectorField`] with node names, state
//! bounds and an optional default initial state. Built-in fields cover linear
//! systems, the componentwise logistic map, vertically moving mass-spring
//! networks and Hill-type regulatory networks; reaction networks live in
//! [`crate::reaction`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type StateVector = DVector<f64>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite state entry at index {0}")]
    NonFinite(usize),
    #[error("singular spring geometry: spring {spring} has zero length with positive rest length")]
    SingularGeometry { spring: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

/// The right-hand side `q(x)` of a network model and its Jacobian.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &StateVector) -> Result<StateVector, ModelError>;
    fn jacobian(&self, x: &StateVector) -> Result<DMatrix<f64>, ModelError>;
    /// The system matrix when the field is linear.
    fn linear_matrix(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

/// Immutable network model.
#[derive(Clone)]
pub struct ContinuousModel {
    names: Vec<String>,
    lower: StateVector,
    upper: StateVector,
    field: Arc<dyn VectorField>,
    default_state: Option<StateVector>,
    recommended_h: Option<f64>,
}

impl fmt::Debug for ContinuousModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousModel")
            .field("names", &self.names)
            .field("field", &self.field)
            .finish()
    }
}

impl ContinuousModel {
    /// Wraps a field with unbounded states and generated node names `x1..xn`.
    pub fn new(field: Arc<dyn VectorField>) -> Self {
        let n = field.dim();
        ContinuousModel {
            names: (1..=n).map(|i| format!("x{i}")).collect(),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
            field,
            default_state: None,
            recommended_h: None,
        }
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self, ModelError> {
        if names.len() != self.dim() {
            return Err(ModelError::Dimension {
                expected: self.dim(),
                got: names.len(),
            });
        }
        self.names = names;
        Ok(self)
    }

    pub fn with_bounds(mut self, lower: StateVector, upper: StateVector) -> Result<Self, ModelError> {
        let n = self.dim();
        for v in [&lower, &upper] {
            if v.len() != n {
                return Err(ModelError::Dimension {
                    expected: n,
                    got: v.len(),
                });
            }
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
            return Err(ModelError::Config("lower bound exceeds upper bound".into()));
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn with_default_state(mut self, x0: StateVector) -> Result<Self, ModelError> {
        self.check_state(&x0)?;
        self.default_state = Some(x0);
        Ok(self)
    }

    pub fn with_recommended_h(mut self, h: Option<f64>) -> Self {
        self.recommended_h = h;
        self
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lower_bounds(&self) -> &StateVector {
        &self.lower
    }

    pub fn upper_bounds(&self) -> &StateVector {
        &self.upper
    }

    pub fn default_state(&self) -> Option<&StateVector> {
        self.default_state.as_ref()
    }

    pub fn recommended_h(&self) -> Option<f64> {
        self.recommended_h
    }

    pub fn field(&self) -> &Arc<dyn VectorField> {
        &self.field
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn check_state(&self, x: &StateVector) -> Result<(), ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(i));
        }
        Ok(())
    }

    pub fn eval_field(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        self.check_state(x)?;
        self.field.eval(x)
    }

    pub fn eval_field_jacobian(&self, x: &StateVector) -> Result<DMatrix<f64>, ModelError> {
        self.check_state(x)?;
        self.field.jacobian(x)
    }

    /// Clamps `x` into the model's box.
    pub fn project(&self, x: &StateVector) -> StateVector {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(v, (l, u))| v.max(*l).min(*u)),
        )
    }

    pub fn contains(&self, x: &StateVector) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (l, u))| v >= l && v <= u)
    }
}

/// Central finite-difference Jacobian with per-coordinate step `1e-6 (1 + |x_i|)`.
pub fn finite_difference_jacobian(
    model: &ContinuousModel,
    x: &StateVector,
) -> Result<DMatrix<f64>, ModelError> {
    let n = model.dim();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = 1e-6 * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let col = (model.eval_field(&xp)? - model.eval_field(&xm)?) / (2.0 * step);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// `ẋ = A x`.
#[derive(Debug, Clone)]
pub struct LinearField {
    a: DMatrix<f64>,
}

impl LinearField {
    pub fn new(a: DMatrix<f64>) -> Result<Self, ModelError> {
        if !a.is_square() {
            return Err(ModelError::Config(format!(
                "system matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(LinearField { a })
    }

    pub fn model(a: DMatrix<f64>) -> Result<ContinuousModel, ModelError> {
        Ok(ContinuousModel::new(Arc::new(Self::new(a)?)))
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn eval(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        Ok(&self.a * x)
    }
    fn jacobian(&self, _x: &StateVector) -> Result<DMatrix<f64>, ModelError> {
        Ok(self.a.clone())
    }
    fn linear_matrix(&self) -> Option<&DMatrix<f64>> {
        Some(&self.a)
    }
}

/// Componentwise logistic growth `ẋ_i = x_i (1 - x_i)`.
#[derive(Debug, Clone)]
pub struct LogisticField {
    n: usize,
}

impl LogisticField {
    pub fn model(n: usize) -> ContinuousModel {
        ContinuousModel::new(Arc::new(LogisticField { n }))
    }
}

impl VectorField for LogisticField {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        Ok(x.map(|v| v * (1.0 - v)))
    }
    fn jacobian(&self, x: &StateVector) -> Result<DMatrix<f64>, ModelError> {
        Ok(DMatrix::from_diagonal(&x.map(|v| 1.0 - 2.0 * v)))
    }
}

// ---------------------------------------------------------------------------
// Mass-spring networks

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MassSpec {
    pub name: String,
    /// kg
    pub mass: f64,
    /// Initial vertical position, m.
    #[serde(default)]
    pub position: f64,
    /// Initial vertical velocity, m/s.
    #[serde(default)]
    pub velocity: f64,
    /// Viscous friction coefficient, kg/s.
    #[serde(default)]
    pub friction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpringSpec {
    pub node: String,
    /// Second endpoint; `None` anchors the spring at height `anchor_y`.
    #[serde(default)]
    pub other: Option<String>,
    #[serde(default)]
    pub anchor_y: f64,
    /// Stiffness, N/m.
    pub k: f64,
    #[serde(default)]
    pub rest_length: f64,
    /// Horizontal distance between the endpoints, m.
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MassSpringConfig {
    #[serde(rename = "mass")]
    pub masses: Vec<MassSpec>,
    #[serde(rename = "spring", default)]
    pub springs: Vec<SpringSpec>,
}

#[derive(Debug, Clone)]
struct Spring {
    i: usize,
    j: Option<usize>,
    anchor_y: f64,
    k: f64,
    rest: f64,
    offset: f64,
}

/// Masses constrained to move vertically, coupled by planar linear springs.
///
/// State layout is `(y_1..y_m, v_1..v_m)`.
#[derive(Debug, Clone)]
pub struct MassSpringField {
    masses: Vec<f64>,
    friction: Vec<f64>,
    springs: Vec<Spring>,
}

impl MassSpringField {
    fn spring_dy(&self, s: &Spring, x: &StateVector) -> f64 {
        let yj = match s.j {
            Some(j) => x[j],
            None => s.anchor_y,
        };
        x[s.i] - yj
    }

    /// Vertical force on endpoint `i` and its derivative with respect to `Δy`.
    fn spring_force(&self, idx: usize, s: &Spring, dy: f64) -> Result<(f64, f64), ModelError> {
        let len = (s.offset * s.offset + dy * dy).sqrt();
        if len == 0.0 {
            if s.rest > 0.0 {
                return Err(ModelError::SingularGeometry { spring: idx });
            }
            return Ok((0.0, -s.k));
        }
        let force = -s.k * (len - s.rest) * dy / len;
        let dforce = -s.k * (1.0 - s.rest * s.offset * s.offset / (len * len * len));
        Ok((force, dforce))
    }

    /// Total mechanical energy (kinetic plus spring potential).
    pub fn energy(&self, x: &StateVector) -> f64 {
        let m = self.masses.len();
        let kinetic: f64 = (0..m).map(|i| 0.5 * self.masses[i] * x[m + i] * x[m + i]).sum();
        kinetic + self.potential(x)
    }

    pub fn potential(&self, x: &StateVector) -> f64 {
        self.springs
            .iter()
            .map(|s| {
                let dy = self.spring_dy(s, x);
                let len = (s.offset * s.offset + dy * dy).sqrt();
                0.5 * s.k * (len - s.rest).powi(2)
            })
            .sum()
    }

    pub fn num_masses(&self) -> usize {
        self.masses.len()
    }
}

impl VectorField for MassSpringField {
    fn dim(&self) -> usize {
        2 * self.masses.len()
    }

    fn eval(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        let m = self.masses.len();
        let mut out = DVector::zeros(2 * m);
        let mut force = vec![0.0; m];
        for (idx, s) in self.springs.iter().enumerate() {
            let (f, _) = self.spring_force(idx, s, self.spring_dy(s, x))?;
            force[s.i] += f;
            if let Some(j) = s.j {
                force[j] -= f;
            }
        }
        for i in 0..m {
            out[i] = x[m + i];
            out[m + i] = (force[i] - self.friction[i] * x[m + i]) / self.masses[i];
        }
        Ok(out)
    }

    fn jacobian(&self, x: &StateVector) -> Result<DMatrix<f64>, ModelError> {
        let m = self.masses.len();
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            jac[(i, m + i)] = 1.0;
            jac[(m + i, m + i)] = -self.friction[i] / self.masses[i];
        }
        for (idx, s) in self.springs.iter().enumerate() {
            let (_, df) = self.spring_force(idx, s, self.spring_dy(s, x))?;
            // dF_i/dy_i = df, dF_i/dy_j = -df, F_j = -F_i
            jac[(m + s.i, s.i)] += df / self.masses[s.i];
            if let Some(j) = s.j {
                jac[(m + s.i, j)] -= df / self.masses[s.i];
                jac[(m + j, s.i)] -= df / self.masses[j];
                jac[(m + j, j)] += df / self.masses[j];
            }
        }
        Ok(jac)
    }
}

pub fn mass_spring_field(cfg: &MassSpringConfig) -> Result<MassSpringField, ModelError> {
    if cfg.masses.is_empty() {
        return Err(ModelError::Config("mass-spring network needs at least one mass".into()));
    }
    let index = |name: &str| {
        cfg.masses
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| ModelError::Config(format!("spring references unknown mass '{name}'")))
    };
    for m in &cfg.masses {
        if !(m.mass > 0.0) || !m.mass.is_finite() {
            return Err(ModelError::Config(format!("mass '{}' must be positive", m.name)));
        }
        if !(m.friction >= 0.0) {
            return Err(ModelError::Config(format!("friction of '{}' must be non-negative", m.name)));
        }
    }
    let mut springs = Vec::with_capacity(cfg.springs.len());
    for s in &cfg.springs {
        if !(s.k >= 0.0) || !(s.offset >= 0.0) || !(s.rest_length >= 0.0) {
            return Err(ModelError::Config(format!(
                "spring on '{}' needs k >= 0, offset >= 0 and rest_length >= 0",
                s.node
            )));
        }
        let i = index(&s.node)?;
        let j = s.other.as_deref().map(index).transpose()?;
        if j == Some(i) {
            return Err(ModelError::Config(format!("spring on '{}' connects a mass to itself", s.node)));
        }
        springs.push(Spring {
            i,
            j,
            anchor_y: s.anchor_y,
            k: s.k,
            rest: s.rest_length,
            offset: s.offset,
        });
    }
    Ok(MassSpringField {
        masses: cfg.masses.iter().map(|m| m.mass).collect(),
        friction: cfg.masses.iter().map(|m| m.friction).collect(),
        springs,
    })
}

pub fn make_mass_spring_model(cfg: &MassSpringConfig) -> Result<ContinuousModel, ModelError> {
    let field = mass_spring_field(cfg)?;
    let mut names: Vec<String> = cfg.masses.iter().map(|m| format!("y_{}", m.name)).collect();
    names.extend(cfg.masses.iter().map(|m| format!("v_{}", m.name)));
    let x0 = DVector::from_iterator(
        2 * cfg.masses.len(),
        cfg.masses
            .iter()
            .map(|m| m.position)
            .chain(cfg.masses.iter().map(|m| m.velocity)),
    );
    ContinuousModel::new(Arc::new(field))
        .with_names(names)?
        .with_default_state(x0)
}

// ---------------------------------------------------------------------------
// Hill-type regulatory networks

fn default_threshold() -> f64 {
    0.5
}

fn default_exponent() -> f64 {
    2.0
}

fn default_decay() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HillInput {
    pub source: String,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HillNode {
    pub name: String,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub activators: Vec<HillInput>,
    #[serde(default)]
    pub inhibitors: Vec<HillInput>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HillNetworkConfig {
    #[serde(rename = "node")]
    pub nodes: Vec<HillNode>,
}

#[derive(Debug, Clone)]
struct HillTerm {
    source: usize,
    exponent: f64,
    threshold: f64,
    inhibitory: bool,
}

impl HillTerm {
    fn value_and_slope(&self, u: f64) -> (f64, f64) {
        let (h, dh) = hill(u, self.exponent, self.threshold);
        if self.inhibitory {
            (1.0 - h, -dh)
        } else {
            (h, dh)
        }
    }
}

/// `h(u) = u^m / (u^m + θ^m)` and its derivative; negative inputs are clamped to 0.
pub fn hill(u: f64, exponent: f64, threshold: f64) -> (f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0);
    }
    let um = u.powf(exponent);
    let tm = threshold.powf(exponent);
    let denom = um + tm;
    let h = um / denom;
    let dh = exponent * u.powf(exponent - 1.0) * tm / (denom * denom);
    (h, dh)
}

/// `ẋ_i = Π_k t_k(x) − γ_i x_i`, where `t_k` are activating Hill terms or
/// inhibiting complements `1 − h`; a node without inputs only decays.
#[derive(Debug, Clone)]
pub struct HillField {
    terms: Vec<Vec<HillTerm>>,
    decay: Vec<f64>,
}

impl VectorField for HillField {
    fn dim(&self) -> usize {
        self.decay.len()
    }

    fn eval(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        Ok(DVector::from_iterator(
            self.dim(),
            self.terms.iter().enumerate().map(|(i, terms)| {
                let production = if terms.is_empty() {
                    0.0
                } else {
                    terms.iter().map(|t| t.value_and_slope(x[t.source]).0).product()
                };
                production - self.decay[i] * x[i]
            }),
        ))
    }

    fn jacobian(&self, x: &StateVector) -> Result<DMatrix<f64>, ModelError> {
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        for (i, terms) in self.terms.iter().enumerate() {
            jac[(i, i)] -= self.decay[i];
            let vals: Vec<(f64, f64)> = terms.iter().map(|t| t.value_and_slope(x[t.source])).collect();
            // product rule without division, so zero-valued terms stay exact
            let mut prefix = vec![1.0; vals.len() + 1];
            for k in 0..vals.len() {
                prefix[k + 1] = prefix[k] * vals[k].0;
            }
            let mut suffix = 1.0;
            for k in (0..vals.len()).rev() {
                jac[(i, terms[k].source)] += prefix[k] * suffix * vals[k].1;
                suffix *= vals[k].0;
            }
        }
        Ok(jac)
    }
}

pub fn make_hill_model(cfg: &HillNetworkConfig) -> Result<ContinuousModel, ModelError> {
    let names: Vec<String> = cfg.nodes.iter().map(|n| n.name.clone()).collect();
    for (i, name) in names.iter().enumerate() {
        if names[..i].contains(name) {
            return Err(ModelError::Config(format!("duplicate node name '{name}'")));
        }
    }
    let index = |name: &str| {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ModelError::Config(format!("unknown Hill input source '{name}'")))
    };
    let mut terms = Vec::with_capacity(names.len());
    let mut decay = Vec::with_capacity(names.len());
    for node in &cfg.nodes {
        if !(node.decay > 0.0) {
            return Err(ModelError::Config(format!("decay of '{}' must be positive", node.name)));
        }
        decay.push(node.decay);
        let mut node_terms = Vec::new();
        for (inputs, inhibitory) in [(&node.activators, false), (&node.inhibitors, true)] {
            for inp in inputs {
                if !(inp.threshold > 0.0 && inp.threshold < 1.0) {
                    return Err(ModelError::Config(format!(
                        "threshold of input '{}' on '{}' must lie in (0, 1)",
                        inp.source, node.name
                    )));
                }
                if !(inp.exponent > 0.0) {
                    return Err(ModelError::Config(format!(
                        "exponent of input '{}' on '{}' must be positive",
                        inp.source, node.name
                    )));
                }
                node_terms.push(HillTerm {
                    source: index(&inp.source)?,
                    exponent: inp.exponent,
                    threshold: inp.threshold,
                    inhibitory,
                });
            }
        }
        terms.push(node_terms);
    }
    let n = names.len();
    ContinuousModel::new(Arc::new(HillField { terms, decay }))
        .with_names(names)?
        .with_bounds(DVector::zeros(n), DVector::from_element(n, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_field_values() {
        let m = LinearField::model(-DMatrix::identity(2, 2)).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(m.eval_field(&x).unwrap(), DVector::from_vec(vec![-1.0, -2.0]));
        assert_eq!(m.eval_field_jacobian(&x).unwrap(), -DMatrix::identity(2, 2));
    }

    #[test]
    fn logistic_values() {
        let m = LogisticField::model(1);
        let x = DVector::from_vec(vec![0.5]);
        assert_eq!(m.eval_field(&x).unwrap()[0], 0.25);
        assert_eq!(m.eval_field_jacobian(&x).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = LogisticField::model(2);
        let err = m.eval_field(&DVector::from_vec(vec![0.1])).unwrap_err();
        assert_eq!(err, ModelError::Dimension { expected: 2, got: 1 });
        assert!(m.eval_field_jacobian(&DVector::zeros(3)).is_err());
        assert!(matches!(
            m.eval_field(&DVector::from_vec(vec![0.1, f64::NAN])),
            Err(ModelError::NonFinite(1))
        ));
    }

    fn single_mass(offset: f64, rest: f64) -> MassSpringConfig {
        MassSpringConfig {
            masses: vec![MassSpec {
                name: "a".into(),
                mass: 2.0,
                position: 0.3,
                velocity: 0.0,
                friction: 0.0,
            }],
            springs: vec![SpringSpec {
                node: "a".into(),
                other: None,
                anchor_y: 0.0,
                k: 1.0,
                rest_length: rest,
                offset,
            }],
        }
    }

    #[test]
    fn single_mass_is_harmonic_oscillator() {
        let m = make_mass_spring_model(&single_mass(0.0, 0.0)).unwrap();
        let x = DVector::from_vec(vec![0.7, -0.2]);
        let dx = m.eval_field(&x).unwrap();
        assert_relative_eq!(dx[0], -0.2);
        assert_relative_eq!(dx[1], -0.7 / 2.0, epsilon = 1e-15);
        let jac = m.eval_field_jacobian(&x).unwrap();
        assert_relative_eq!(jac, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, 0.0]));
    }

    #[test]
    fn spring_at_rest_length_exerts_no_force() {
        // d = 0.6, l0 = 1 -> rest at dy = 0.8
        let m = make_mass_spring_model(&single_mass(0.6, 1.0)).unwrap();
        let dx = m.eval_field(&DVector::from_vec(vec![0.8, 0.0])).unwrap();
        assert!(dx[1].abs() < 1e-15);
    }

    #[test]
    fn coincident_endpoints_with_rest_length_fail() {
        let m = make_mass_spring_model(&single_mass(0.0, 1.0)).unwrap();
        let err = m.eval_field(&DVector::from_vec(vec![0.0, 0.0])).unwrap_err();
        assert_eq!(err, ModelError::SingularGeometry { spring: 0 });
    }

    #[test]
    fn mass_spring_config_validation() {
        let mut cfg = single_mass(0.0, 0.0);
        cfg.masses[0].mass = 0.0;
        assert!(make_mass_spring_model(&cfg).is_err());
        let mut cfg = single_mass(0.0, 0.0);
        cfg.springs[0].offset = -1.0;
        assert!(make_mass_spring_model(&cfg).is_err());
        let mut cfg = single_mass(0.0, 0.0);
        cfg.springs[0].other = Some("nope".into());
        assert!(make_mass_spring_model(&cfg).is_err());
    }

    fn node(name: &str, act: &[&str], inh: &[&str]) -> HillNode {
        let input = |s: &&str| HillInput {
            source: s.to_string(),
            exponent: 3.0,
            threshold: 0.5,
        };
        HillNode {
            name: name.into(),
            decay: 1.5,
            activators: act.iter().map(input).collect(),
            inhibitors: inh.iter().map(input).collect(),
        }
    }

    #[test]
    fn hill_without_inputs_only_decays() {
        let m = make_hill_model(&HillNetworkConfig {
            nodes: vec![node("a", &[], &[])],
        })
        .unwrap();
        let dx = m.eval_field(&DVector::from_vec(vec![0.4])).unwrap();
        assert_relative_eq!(dx[0], -1.5 * 0.4);
    }

    #[test]
    fn hill_term_is_half_at_threshold() {
        for m in [0.5, 1.0, 2.0, 7.3] {
            assert_relative_eq!(hill(0.3, m, 0.3).0, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn hill_config_validation() {
        let mut n = node("a", &["a"], &[]);
        n.activators[0].threshold = 1.0;
        assert!(make_hill_model(&HillNetworkConfig { nodes: vec![n] }).is_err());
        let mut n = node("a", &["a"], &[]);
        n.activators[0].exponent = 0.0;
        assert!(make_hill_model(&HillNetworkConfig { nodes: vec![n] }).is_err());
        let mut n = node("a", &[], &[]);
        n.decay = 0.0;
        assert!(make_hill_model(&HillNetworkConfig { nodes: vec![n] }).is_err());
        assert!(make_hill_model(&HillNetworkConfig {
            nodes: vec![node("a", &["b"], &[])]
        })
        .is_err());
    }

    #[test]
    fn hill_jacobian_matches_finite_differences() {
        let m = make_hill_model(&HillNetworkConfig {
            nodes: vec![node("a", &["b"], &["c"]), node("b", &["a", "c"], &[]), node("c", &[], &["a", "c"])],
        })
        .unwrap();
        let x = DVector::from_vec(vec![0.3, 0.6, 0.45]);
        let analytic = m.eval_field_jacobian(&x).unwrap();
        let fd = finite_difference_jacobian(&m, &x).unwrap();
        assert!(crate::linalg::max_rel_error(&analytic, &fd) < 1e-7);
    }
}
