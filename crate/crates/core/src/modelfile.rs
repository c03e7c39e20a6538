//! Loading models from TOML files.
//!
//! A model file may declare `kind = "reaction" | "hill" | "mass_spring" |
//! "linear" | "logistic"`; files without a `kind` key are reaction mechanisms.
//! Every kind accepts an optional `recommended_h`. Parsing is strict: unknown
//! keys are rejected.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;

use crate::model::{
    make_hill_model, make_mass_spring_model, ContinuousModel, HillNetworkConfig, LinearField,
    LogisticField, MassSpringConfig, ModelError,
};
use crate::reaction::{mechanism_to_model, MechanismError, ReactionMechanism};

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("cannot read model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model file parse error: {0}")]
    Parse(String),
    #[error("unknown model kind '{0}'")]
    UnknownKind(String),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearFile {
    a: Vec<Vec<f64>>,
    #[serde(default)]
    names: Option<Vec<String>>,
    #[serde(default)]
    initial: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogisticFile {
    n: usize,
}

/// A loaded model plus the reaction mechanism it came from, if any.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: ContinuousModel,
    pub mechanism: Option<ReactionMechanism>,
}

fn parse_err(e: impl std::fmt::Display) -> ModelFileError {
    ModelFileError::Parse(e.to_string())
}

pub fn parse_model(text: &str) -> Result<LoadedModel, ModelFileError> {
    let mut table: toml::Table = toml::from_str(text).map_err(parse_err)?;
    let kind = match table.remove("kind") {
        Some(toml::Value::String(s)) => s,
        Some(other) => return Err(ModelFileError::Parse(format!("'kind' must be a string, got {other}"))),
        None => "reaction".to_string(),
    };
    let recommended_h = match (kind.as_str(), table.get("recommended_h")) {
        // reaction files carry it in their own schema
        ("reaction", _) | (_, None) => None,
        (_, Some(v)) => {
            let h = v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .ok_or_else(|| ModelFileError::Parse("'recommended_h' must be a number".into()))?;
            table.remove("recommended_h");
            Some(h)
        }
    };
    let value = toml::Value::Table(table);
    let (model, mechanism) = match kind.as_str() {
        "reaction" => {
            let file = value.try_into().map_err(parse_err)?;
            let mech = ReactionMechanism::from_file_struct(file)?;
            (mechanism_to_model(&mech)?, Some(mech))
        }
        "hill" => {
            let cfg: HillNetworkConfig = value.try_into().map_err(parse_err)?;
            (make_hill_model(&cfg)?, None)
        }
        "mass_spring" => {
            let cfg: MassSpringConfig = value.try_into().map_err(parse_err)?;
            (make_mass_spring_model(&cfg)?, None)
        }
        "linear" => {
            let file: LinearFile = value.try_into().map_err(parse_err)?;
            let n = file.a.len();
            if file.a.iter().any(|row| row.len() != n) {
                return Err(ModelFileError::Parse("linear system matrix must be square".into()));
            }
            let a = DMatrix::from_fn(n, n, |i, j| file.a[i][j]);
            let mut model = ContinuousModel::new(Arc::new(LinearField::new(a)?));
            if let Some(names) = file.names {
                model = model.with_names(names)?;
            }
            if let Some(x0) = file.initial {
                model = model.with_default_state(DVector::from_vec(x0))?;
            }
            (model, None)
        }
        "logistic" => {
            let file: LogisticFile = value.try_into().map_err(parse_err)?;
            let n = file.n;
            let model = LogisticField::model(n)
                .with_bounds(DVector::zeros(n), DVector::from_element(n, 1.0))?;
            (model, None)
        }
        other => return Err(ModelFileError::UnknownKind(other.to_string())),
    };
    let model = match recommended_h {
        Some(h) => model.with_recommended_h(Some(h)),
        None => model,
    };
    Ok(LoadedModel { model, mechanism })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel, ModelFileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model(&text)
}
