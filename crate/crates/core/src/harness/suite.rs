//! Batch attack runs.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{run_attack, AttackCase, AttackVerdict, AttackerModel, Outcome};
use crate::channel::ChannelConfig;
use crate::harness::{link_seed_for, Scenario, ScenarioError};
use crate::protocol::SessionConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SuiteEntry {
    Case(AttackCase),
    Model(AttackerModel),
}

impl SuiteEntry {
    fn model(&self) -> AttackerModel {
        match self {
            SuiteEntry::Case(c) => AttackerModel::new(*c),
            SuiteEntry::Model(m) => m.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    /// Seeds per attack: `base_seed .. base_seed + seeds`.
    #[serde(default = "one")]
    pub seeds: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_config: Option<SessionConfig>,
    pub attacks: Vec<SuiteEntry>,
}

fn one() -> u64 {
    1
}

/// Session parameters attacks run under unless the suite overrides them.
pub fn attack_session_config() -> SessionConfig {
    SessionConfig {
        session_duration_ms: 5_000,
        exponent_max: 16,
        ca_round_interval_ms: 1_000,
    }
}

impl SuiteConfig {
    pub fn default_suite() -> Self {
        Self {
            seeds: 1,
            base_seed: 0,
            session_config: None,
            attacks: AttackCase::ALL.iter().map(|c| SuiteEntry::Case(*c)).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: SuiteConfig = serde_json::from_str(text)?;
        if cfg.attacks.is_empty() {
            return Err(ScenarioError::Invalid("suite lists no attacks".into()));
        }
        if cfg.seeds == 0 {
            return Err(ScenarioError::Invalid("seeds must be positive".into()));
        }
        cfg.session()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn session(&self) -> Result<SessionConfig, ScenarioError> {
        let s = self.session_config.unwrap_or_else(attack_session_config);
        s.validate()?;
        Ok(s)
    }

    /// Every (attack, seed) scenario in run order.
    pub fn scenarios(&self) -> Result<Vec<Scenario>, ScenarioError> {
        let session = self.session()?;
        let mut out = Vec::new();
        for entry in &self.attacks {
            for seed in self.base_seed..self.base_seed + self.seeds {
                out.push(Scenario {
                    scenario_seed: seed,
                    session_config: session,
                    channel_config: ChannelConfig::lossless(link_seed_for(seed)),
                    attacker: Some(entry.model()),
                    // Each attack stretches this to the time it needs.
                    duration_ms: 1,
                    ca_rounds_expected: None,
                });
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub scenarios_executed: usize,
    pub unexpected: usize,
    pub residual: usize,
    pub rejected: usize,
    pub prediction_mismatches: usize,
    pub verdicts: Vec<AttackVerdict>,
}

impl SuiteReport {
    pub fn any_unexpected(&self) -> bool {
        self.unexpected > 0
    }
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport, ScenarioError> {
    let scenarios = cfg.scenarios()?;
    let verdicts = scenarios
        .par_iter()
        .map(|s| run_attack(s, s.attacker.as_ref().expect("suite scenarios carry an attacker")).map(|(_, v)| v))
        .collect::<Result<Vec<_>, _>>()?;
    let count = |o: Outcome| verdicts.iter().filter(|v| v.outcome == o).count();
    Ok(SuiteReport {
        scenarios_executed: verdicts.len(),
        unexpected: count(Outcome::Unexpected),
        residual: count(Outcome::ResidualRisk),
        rejected: count(Outcome::Rejected),
        prediction_mismatches: verdicts.iter().filter(|v| !v.prediction_held).count(),
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_names_and_models() {
        let cfg = SuiteConfig::from_json(
            r#"{"seeds": 2, "attacks": ["replay_m3", {"case": "clone_after_expiry", "clone_delay_ms": 9000}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.scenarios().unwrap().len(), 4);
        assert_eq!(cfg.attacks[0], SuiteEntry::Case(AttackCase::ReplayM3));
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            "",
            "{}",
            r#"{"attacks": []}"#,
            r#"{"attacks": ["nope"]}"#,
            r#"{"attacks": ["replay_m1"], "x": 1}"#,
        ] {
            assert!(SuiteConfig::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn default_suite_has_no_surprises() {
        let report = run_suite(&SuiteConfig::default_suite()).unwrap();
        assert_eq!(report.scenarios_executed, AttackCase::ALL.len());
        assert_eq!(report.unexpected, 0);
        assert_eq!(report.prediction_mismatches, 0);
        assert_eq!(report.residual, 3);
    }
}
