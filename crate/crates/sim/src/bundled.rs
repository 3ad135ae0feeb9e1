//! Scenarios shipped with the crate.

use crate::scenario::{load_scenario, Scenario};

pub const SCENARIOS: [(&str, &str); 5] = [
    ("whale_capture", include_str!("../scenarios/whale_capture.json")),
    ("apathy", include_str!("../scenarios/apathy.json")),
    ("flashloan", include_str!("../scenarios/flashloan.json")),
    ("speculation", include_str!("../scenarios/speculation.json")),
    ("commons_cycle", include_str!("../scenarios/commons_cycle.json")),
];

pub fn source(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Loads a bundled scenario. Bundled files are validated in tests, so this
/// only fails for unknown names.
pub fn scenario(name: &str) -> Option<Scenario> {
    source(name).map(|s| load_scenario(s.as_bytes()).expect("bundled scenarios are valid"))
}

pub fn names() -> impl Iterator<Item = &'static str> {
    SCENARIOS.iter().map(|(n, _)| *n)
}
