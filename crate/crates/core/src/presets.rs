//! Named (pump range, input bound) pairs for the two plants.

use serde::Serialize;

/// A saturation preset: the pump's upper rate and the matching bound `μ`
/// used during synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub model: &'static str,
    pub u_max: f64,
    pub mu: f64,
}

pub const BERGMAN: [Preset; 3] = [
    Preset { name: "sat6", model: "bergman", u_max: 6.0, mu: 0.095 },
    Preset { name: "sat10", model: "bergman", u_max: 10.0, mu: 0.25 },
    Preset { name: "sat25", model: "bergman", u_max: 25.0, mu: 1.2 },
];

pub const TOLIC: [Preset; 3] = [
    Preset { name: "sat6", model: "tolic", u_max: 6.0, mu: 0.004 },
    Preset { name: "sat12", model: "tolic", u_max: 12.0, mu: 0.08 },
    Preset { name: "sat20", model: "tolic", u_max: 20.0, mu: 0.18 },
];

/// Presets of a model, ordered by growing pump budget.
pub fn for_model(model: &str) -> Option<&'static [Preset]> {
    match model {
        "bergman" => Some(&BERGMAN),
        "tolic" => Some(&TOLIC),
        _ => None,
    }
}

pub fn find(model: &str, name: &str) -> Option<&'static Preset> {
    for_model(model)?.iter().find(|p| p.name == name)
}
