//! Mass-action reaction networks `ẋ = Γ q_c(x)`.
//!
//! Each reversible reaction `Σ α_i M_i ⇌ Σ β_i M_i` contributes the polynomial
//! rate `q_j = d_f Π x_i^α_i − d_b Π x_i^β_i`, and `Γ_ij = β_ji − α_ji`.
//! Mechanisms are read from TOML:
//!
//! ```toml
//! species = ["H2", "O2", "H2O"]
//! temperature = 2500.0            # K, needed only for Arrhenius rates
//! conservation = [[2, 0, 2], [0, 2, 1]]
//!
//! [[reaction]]
//! reactants = { H2 = 2, O2 = 1 }
//! products = { H2O = 2 }
//! kf = { A = 1.0e3, b = 0.5, Ea = 2.0e4 }
//! kr = 0.1
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;

use crate::model::{ContinuousModel, ModelError, StateVector, VectorField};

/// Universal gas constant, J/(mol K).
pub const GAS_CONSTANT: f64 = 8.314462618;

/// Largest stoichiometric coefficient accepted in mechanism files.
pub const MAX_STOICHIOMETRY: u32 = 6;

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("cannot read mechanism file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("mechanism parse error: {0}")]
    Parse(String),
    #[error("reaction {reaction} references undeclared species '{species}'")]
    UndeclaredSpecies { reaction: usize, species: String },
    #[error("duplicate species '{0}'")]
    DuplicateSpecies(String),
    #[error("reaction {0} has no reactants and no products")]
    EmptyReaction(usize),
    #[error("reaction {reaction}: stoichiometric coefficient {value} of '{species}' exceeds {MAX_STOICHIOMETRY}")]
    Stoichiometry {
        reaction: usize,
        species: String,
        value: u32,
    },
    #[error("reaction {reaction}: {what}")]
    Rate { reaction: usize, what: String },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("conservation row {row} has length {got}, expected {expected}")]
    Conservation { row: usize, got: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Modified Arrhenius law `A T^b exp(-Ea / (R T))`.
pub fn arrhenius_rate(a: f64, b: f64, ea: f64, temperature: f64) -> Result<f64, MechanismError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(MechanismError::Temperature(temperature));
    }
    Ok(a * temperature.powf(b) * (-ea / (GAS_CONSTANT * temperature)).exp())
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum RateSpec {
    Explicit(f64),
    Arrhenius(ArrheniusSpec),
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ArrheniusSpec {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(rename = "Ea", default)]
    pub ea: f64,
}

impl RateSpec {
    fn resolve(&self, reaction: usize, temperature: Option<f64>) -> Result<f64, MechanismError> {
        let k = match self {
            RateSpec::Explicit(k) => *k,
            RateSpec::Arrhenius(p) => {
                let t = temperature.ok_or_else(|| MechanismError::Rate {
                    reaction,
                    what: "Arrhenius rate given but no temperature declared".into(),
                })?;
                arrhenius_rate(p.a, p.b, p.ea, t)?
            }
        };
        if !(k >= 0.0) || !k.is_finite() {
            return Err(MechanismError::Rate {
                reaction,
                what: format!("rate constant must be a finite non-negative number, got {k}"),
            });
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReactionFile {
    #[serde(default)]
    reactants: BTreeMap<String, u32>,
    #[serde(default)]
    products: BTreeMap<String, u32>,
    kf: RateSpec,
    #[serde(default)]
    kr: Option<RateSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct MechanismFile {
    species: Vec<String>,
    #[serde(default)]
    temperature: Option<f64>,
    #[serde(default)]
    conservation: Vec<Vec<f64>>,
    #[serde(default)]
    initial: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    recommended_h: Option<f64>,
    #[serde(default, rename = "reaction")]
    reactions: Vec<ReactionFile>,
}

/// One resolved reaction with dense stoichiometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub alpha: Vec<u32>,
    pub beta: Vec<u32>,
    pub forward_rate: f64,
    pub backward_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionMechanism {
    pub species: Vec<String>,
    pub reactions: Vec<Reaction>,
    pub temperature: Option<f64>,
    /// Rows `w` with `wᵀ Γ = 0` (atom balances).
    pub conservation: Vec<DVector<f64>>,
    pub initial: Option<StateVector>,
    pub recommended_h: Option<f64>,
}

impl ReactionMechanism {
    pub fn num_species(&self) -> usize {
        self.species.len()
    }

    pub fn num_reactions(&self) -> usize {
        self.reactions.len()
    }

    /// `Γ ∈ R^{n × n_r}` with `Γ_ij = β_ji − α_ji`.
    pub fn stoichiometry(&self) -> DMatrix<f64> {
        let n = self.num_species();
        DMatrix::from_fn(n, self.num_reactions(), |i, j| {
            self.reactions[j].beta[i] as f64 - self.reactions[j].alpha[i] as f64
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, MechanismError> {
        let file: MechanismFile = toml::from_str(text).map_err(|e| MechanismError::Parse(e.to_string()))?;
        Self::from_file_struct(file)
    }

    pub(crate) fn from_file_struct(file: MechanismFile) -> Result<Self, MechanismError> {
        let n = file.species.len();
        for (i, s) in file.species.iter().enumerate() {
            if file.species[..i].contains(s) {
                return Err(MechanismError::DuplicateSpecies(s.clone()));
            }
        }
        if let Some(t) = file.temperature {
            if !(t > 0.0) {
                return Err(MechanismError::Temperature(t));
            }
        }
        let index = |reaction: usize, name: &str| {
            file.species
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| MechanismError::UndeclaredSpecies {
                    reaction,
                    species: name.to_string(),
                })
        };
        let mut reactions = Vec::with_capacity(file.reactions.len());
        for (j, r) in file.reactions.iter().enumerate() {
            let mut alpha = vec![0; n];
            let mut beta = vec![0; n];
            for (map, dense) in [(&r.reactants, &mut alpha), (&r.products, &mut beta)] {
                for (name, &coef) in map {
                    if coef > MAX_STOICHIOMETRY {
                        return Err(MechanismError::Stoichiometry {
                            reaction: j,
                            species: name.clone(),
                            value: coef,
                        });
                    }
                    dense[index(j, name)?] += coef;
                }
            }
            if alpha.iter().chain(beta.iter()).all(|&c| c == 0) {
                return Err(MechanismError::EmptyReaction(j));
            }
            let forward_rate = r.kf.resolve(j, file.temperature)?;
            let backward_rate = match &r.kr {
                Some(spec) => spec.resolve(j, file.temperature)?,
                None => 0.0,
            };
            reactions.push(Reaction {
                alpha,
                beta,
                forward_rate,
                backward_rate,
            });
        }
        let mut conservation = Vec::with_capacity(file.conservation.len());
        for (row, w) in file.conservation.iter().enumerate() {
            if w.len() != n {
                return Err(MechanismError::Conservation {
                    row,
                    got: w.len(),
                    expected: n,
                });
            }
            conservation.push(DVector::from_vec(w.clone()));
        }
        let initial = match &file.initial {
            Some(map) => {
                let mut x0 = DVector::zeros(n);
                for (name, &v) in map {
                    x0[index(usize::MAX, name)?] = v;
                }
                Some(x0)
            }
            None => None,
        };
        Ok(ReactionMechanism {
            species: file.species,
            reactions,
            temperature: file.temperature,
            conservation,
            initial,
            recommended_h: file.recommended_h,
        })
    }
}

pub fn load_mechanism(path: impl AsRef<Path>) -> Result<ReactionMechanism, MechanismError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MechanismError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ReactionMechanism::from_toml_str(&text)
}

#[derive(Debug, Clone)]
struct SparseReaction {
    reactants: Vec<(usize, i32)>,
    products: Vec<(usize, i32)>,
    kf: f64,
    kr: f64,
    /// Nonzero entries of the Γ column.
    net: Vec<(usize, f64)>,
}

fn monomial(x: &StateVector, powers: &[(usize, i32)]) -> f64 {
    powers.iter().map(|&(i, p)| x[i].powi(p)).product()
}

/// Adds `scale * ∂(Π x_i^p_i)/∂x` into `grad`.
fn monomial_gradient(x: &StateVector, powers: &[(usize, i32)], scale: f64, grad: &mut [f64]) {
    for (k, &(i, p)) in powers.iter().enumerate() {
        let mut term = scale * p as f64 * x[i].powi(p - 1);
        for (m, &(l, q)) in powers.iter().enumerate() {
            if m != k {
                term *= x[l].powi(q);
            }
        }
        grad[i] += term;
    }
}

#[derive(Debug, Clone)]
pub struct ReactionField {
    n: usize,
    reactions: Vec<SparseReaction>,
}

impl ReactionField {
    pub fn new(mech: &ReactionMechanism) -> Self {
        let n = mech.num_species();
        let sparse = |c: &[u32]| -> Vec<(usize, i32)> {
            c.iter()
                .enumerate()
                .filter(|(_, &v)| v > 0)
                .map(|(i, &v)| (i, v as i32))
                .collect()
        };
        let reactions = mech
            .reactions
            .iter()
            .map(|r| SparseReaction {
                reactants: sparse(&r.alpha),
                products: sparse(&r.beta),
                kf: r.forward_rate,
                kr: r.backward_rate,
                net: (0..n)
                    .filter(|&i| r.beta[i] != r.alpha[i])
                    .map(|i| (i, r.beta[i] as f64 - r.alpha[i] as f64))
                    .collect(),
            })
            .collect();
        ReactionField { n, reactions }
    }

    /// Reaction rate vector `q_c(x)`.
    pub fn rates(&self, x: &StateVector) -> DVector<f64> {
        DVector::from_iterator(
            self.reactions.len(),
            self.reactions
                .iter()
                .map(|r| r.kf * monomial(x, &r.reactants) - r.kr * monomial(x, &r.products)),
        )
    }
}

impl VectorField for ReactionField {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        let mut out = DVector::zeros(self.n);
        for r in &self.reactions {
            let q = r.kf * monomial(x, &r.reactants) - r.kr * monomial(x, &r.products);
            for &(i, g) in &r.net {
                out[i] += g * q;
            }
        }
        Ok(out)
    }

    fn jacobian(&self, x: &StateVector) -> Result<DMatrix<f64>, ModelError> {
        let mut jac = DMatrix::zeros(self.n, self.n);
        let mut grad = vec![0.0; self.n];
        for r in &self.reactions {
            if r.net.is_empty() {
                continue;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            monomial_gradient(x, &r.reactants, r.kf, &mut grad);
            monomial_gradient(x, &r.products, -r.kr, &mut grad);
            for &(i, g) in &r.net {
                for (k, dq) in grad.iter().enumerate() {
                    if *dq != 0.0 {
                        jac[(i, k)] += g * dq;
                    }
                }
            }
        }
        Ok(jac)
    }
}

/// Builds `ẋ = Γ q_c(x)` with non-negative concentration bounds.
pub fn mechanism_to_model(mech: &ReactionMechanism) -> Result<ContinuousModel, MechanismError> {
    let n = mech.num_species();
    let mut model = ContinuousModel::new(Arc::new(ReactionField::new(mech)))
        .with_names(mech.species.clone())?
        .with_bounds(DVector::zeros(n), DVector::from_element(n, f64::INFINITY))?
        .with_recommended_h(mech.recommended_h);
    if let Some(x0) = &mech.initial {
        model = model.with_default_state(x0.clone())?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const A_B: &str = r#"
species = ["A", "B"]
[[reaction]]
reactants = { A = 1 }
products = { B = 1 }
kf = 2.0
kr = 1.0
"#;

    #[test]
    fn reversible_pair_field_and_jacobian() {
        let mech = ReactionMechanism::from_toml_str(A_B).unwrap();
        let model = mechanism_to_model(&mech).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(model.eval_field(&x).unwrap(), DVector::from_vec(vec![-1.0, 1.0]));
        assert_eq!(
            model.eval_field_jacobian(&x).unwrap(),
            DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 2.0, -1.0])
        );
        assert_eq!(model.lower_bounds(), &DVector::zeros(2));
    }

    #[test]
    fn dimerization() {
        let mech = ReactionMechanism::from_toml_str(
            r#"
species = ["A", "B"]
[[reaction]]
reactants = { A = 2 }
products = { B = 1 }
kf = 1.0
"#,
        )
        .unwrap();
        let model = mechanism_to_model(&mech).unwrap();
        let dx = model.eval_field(&DVector::from_vec(vec![3.0, 0.0])).unwrap();
        assert_eq!(dx, DVector::from_vec(vec![-18.0, 9.0]));
    }

    #[test]
    fn zero_state_is_stationary_when_all_species_participate() {
        let mech = ReactionMechanism::from_toml_str(
            r#"
species = ["A", "B", "C"]
[[reaction]]
reactants = { A = 1, B = 1 }
products = { C = 1, A = 1 }
kf = 3.0
kr = 0.5
[[reaction]]
reactants = { C = 2, B = 1 }
products = { A = 1, C = 1 }
kf = 1.0
kr = 4.0
"#,
        )
        .unwrap();
        let model = mechanism_to_model(&mech).unwrap();
        assert_eq!(model.eval_field(&DVector::zeros(3)).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn arrhenius_values() {
        assert_eq!(arrhenius_rate(5.0, 0.0, 0.0, 1234.0).unwrap(), 5.0);
        assert_relative_eq!(arrhenius_rate(1.0, 1.0, 0.0, 300.0).unwrap(), 300.0, max_relative = 1e-15);
        // 1e10 * exp(-50000 / (8.314462618 * 2500)), evaluated with 50-digit arithmetic
        let expected = 9.0225146846217972e8;
        assert_relative_eq!(
            arrhenius_rate(1e10, 0.0, 5e4, 2500.0).unwrap(),
            expected,
            max_relative = 1e-14
        );
        assert!(matches!(arrhenius_rate(1.0, 0.0, 0.0, 0.0), Err(MechanismError::Temperature(_))));
        assert!(arrhenius_rate(1.0, 0.0, 0.0, -3.0).is_err());
    }

    #[test]
    fn empty_reaction_list_gives_zero_field() {
        let mech = ReactionMechanism::from_toml_str("species = [\"A\", \"B\"]\n").unwrap();
        assert_eq!(mech.num_reactions(), 0);
        let model = mechanism_to_model(&mech).unwrap();
        assert_eq!(model.eval_field(&DVector::from_vec(vec![0.3, 2.0])).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn undeclared_species_is_rejected() {
        let err = ReactionMechanism::from_toml_str(
            r#"
species = ["A"]
[[reaction]]
reactants = { A = 1 }
products = { Xx = 1 }
kf = 1.0
"#,
        )
        .unwrap_err();
        assert!(matches!(err, MechanismError::UndeclaredSpecies { ref species, .. } if species == "Xx"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = ReactionMechanism::from_toml_str("species = [\"A\"]\npressure = 1.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pressure"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn arrhenius_rate_in_file_needs_temperature() {
        let text = r#"
species = ["A", "B"]
[[reaction]]
reactants = { A = 1 }
products = { B = 1 }
kf = { A = 2.0, b = 1.0, Ea = 0.0 }
"#;
        assert!(ReactionMechanism::from_toml_str(text).is_err());
        let with_t = format!("temperature = 300.0\n{text}");
        let mech = ReactionMechanism::from_toml_str(&with_t).unwrap();
        assert_relative_eq!(mech.reactions[0].forward_rate, 600.0, max_relative = 1e-15);
    }

    #[test]
    fn stoichiometry_limit() {
        let err = ReactionMechanism::from_toml_str(
            "species = [\"A\", \"B\"]\n[[reaction]]\nreactants = { A = 7 }\nproducts = { B = 1 }\nkf = 1.0\n",
        )
        .unwrap_err();
        assert!(matches!(err, MechanismError::Stoichiometry { value: 7, .. }));
    }

    #[test]
    fn irreversible_rates_are_non_negative_on_the_orthant() {
        let mech = ReactionMechanism::from_toml_str(
            "species = [\"A\", \"B\", \"C\"]\n[[reaction]]\nreactants = { A = 1, B = 2 }\nproducts = { C = 1 }\nkf = 0.7\n",
        )
        .unwrap();
        let field = ReactionField::new(&mech);
        for x in [[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [0.1, 5.0, 0.0]] {
            assert!(field.rates(&DVector::from_row_slice(&x))[0] >= 0.0);
        }
    }
}
