//! Demo models shipped with the crate.

use crate::modelfile::{parse_model, LoadedModel};

pub const H2O2_MINI: &str = include_str!("../../../models/h2o2_mini.toml");
pub const HILL5: &str = include_str!("../../../models/hill5.toml");
pub const CD_TOY: &str = include_str!("../../../models/cd_toy.toml");
pub const MASS_SPRING2: &str = include_str!("../../../models/mass_spring2.toml");
pub const LINEAR3: &str = include_str!("../../../models/linear3.toml");

pub const NAMES: [&str; 5] = ["h2o2_mini", "hill5", "cd_toy", "mass_spring2", "linear3"];

/// Source text of a bundled model.
pub fn source(name: &str) -> Option<&'static str> {
    Some(match name {
        "h2o2_mini" => H2O2_MINI,
        "hill5" => HILL5,
        "cd_toy" => CD_TOY,
        "mass_spring2" => MASS_SPRING2,
        "linear3" => LINEAR3,
        _ => return None,
    })
}

/// Parses a bundled model by name.
pub fn load(name: &str) -> Option<LoadedModel> {
    let text = source(name)?;
    Some(parse_model(text).unwrap_or_else(|e| panic!("bundled model {name} is invalid: {e}")))
}

pub fn h2o2_mini() -> LoadedModel {
    load("h2o2_mini").unwrap()
}

pub fn hill5() -> LoadedModel {
    load("hill5").unwrap()
}

pub fn cd_toy() -> LoadedModel {
    load("cd_toy").unwrap()
}
