//! Scenario documents shipped with the crate.

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::sim::Expectation;

pub const MULTIROBOT_HEX: &str = include_str!("../scenarios/multirobot_hex.toml");
pub const DOUBLE_INTEGRATOR: &str = include_str!("../scenarios/double_integrator.toml");
pub const NULLSPACE_TWO_TASK: &str = include_str!("../scenarios/nullspace_two_task.toml");

/// `(name, document)` for every shipped scenario.
pub const BUILTIN: [(&str, &str); 3] = [
    ("multirobot_hex", MULTIROBOT_HEX),
    ("double_integrator", DOUBLE_INTEGRATOR),
    ("nullspace_two_task", NULLSPACE_TWO_TASK),
];

pub fn builtin(name: &str) -> Result<ScenarioConfig> {
    let (_, text) = BUILTIN.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        let names: Vec<_> = BUILTIN.iter().map(|(n, _)| *n).collect();
        Error::Config(format!("no shipped scenario `{name}`; available: {}", names.join(", ")))
    })?;
    ScenarioConfig::from_toml_str(text)
}

/// Per-segment expectations for the three-phase hexagon schedule, with tasks
/// in the order formation, goal 1, goal 2, goal 3.
pub fn multirobot_hex_expectations() -> Vec<Vec<(usize, Expectation)>> {
    use Expectation::*;
    vec![
        vec![(0, Grows), (1, Converges), (2, Converges), (3, Converges)],
        vec![(0, Converges)],
        vec![(0, Converges), (1, Converges), (2, Persists), (3, Persists)],
    ]
}

/// Declared phase expectations of a shipped scenario, empty for the rest.
pub fn expectations(name: &str) -> Vec<Vec<(usize, Expectation)>> {
    match name {
        "multirobot_hex" => multirobot_hex_expectations(),
        _ => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_parses() {
        for (name, _) in BUILTIN {
            let cfg = builtin(name).unwrap();
            assert_eq!(cfg.name, name);
            assert_eq!(
                ScenarioConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap(),
                cfg
            );
        }
        assert!(builtin("nope").unwrap_err().to_string().contains("multirobot_hex"));
    }
}
