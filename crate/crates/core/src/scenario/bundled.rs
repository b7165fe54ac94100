use super::{Scenario, ScenarioError};

pub struct Bundled {
    pub name: &'static str,
    pub text: &'static str,
}

macro_rules! bundle {
    ($($name:literal),* $(,)?) => {
        &[$(Bundled { name: $name, text: include_str!(concat!("../../scenarios/", $name, ".toml")) }),*]
    };
}

/// Scenarios shipped with the binary.
pub const BUNDLED: &[Bundled] = bundle!(
    "galilean_gravity",
    "rotation_gravity_2d",
    "free_to_gravity",
    "oscillator_magnetic",
    "oscillator_magnetic_detuned",
    "conserved_operator_gravity",
);

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|b| b.name)
}

pub fn bundled(name: &str) -> Option<Result<Scenario, ScenarioError>> {
    BUNDLED
        .iter()
        .find(|b| b.name == name)
        .map(|b| Scenario::parse(b.text, b.name))
}
