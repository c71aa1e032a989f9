//! Scenario runner: builds a [`World`], drives it to the scenario's end time
//! and returns the transcript, counters and (for attack scenarios) a verdict.

pub mod suite;
pub mod transcript;
pub mod world;

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{self, AttackVerdict, AttackerModel};
use crate::channel::{ChannelConfig, ChannelError};
use crate::crypto::hash;
use crate::protocol::{ConfigError, SessionConfig};

pub use suite::{attack_session_config, run_suite, SuiteConfig, SuiteEntry, SuiteReport};
pub use transcript::{EventKind, Transcript, TranscriptEvent};
pub use world::{RunReport, Stats, Tap, World, WorldConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("invalid session config: {0}")]
    Session(#[from] ConfigError),
    #[error("invalid channel config: {0}")]
    Channel(#[from] ChannelError),
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read config: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub scenario_seed: u64,
    #[serde(default)]
    pub session_config: SessionConfig,
    pub channel_config: ChannelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attacker: Option<AttackerModel>,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ca_rounds_expected: Option<u64>,
}

/// A per-seed link secret, so different seeds see different channels.
pub fn link_seed_for(seed: u64) -> [u8; 32] {
    let mut buf = b"link".to_vec();
    buf.extend_from_slice(&seed.to_be_bytes());
    *hash(&buf).as_bytes()
}

impl Scenario {
    /// Lossless, attacker-free scenario with a link seed derived from `seed`.
    pub fn honest(seed: u64, session_config: SessionConfig, duration_ms: u64) -> Self {
        Self {
            scenario_seed: seed,
            session_config,
            channel_config: ChannelConfig::lossless(link_seed_for(seed)),
            attacker: None,
            duration_ms,
            ca_rounds_expected: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_ms == 0 {
            return Err(ScenarioError::Invalid("duration_ms must be positive".into()));
        }
        self.session_config.validate()?;
        self.channel_config.validate()?;
        Ok(())
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            scenario_seed: self.scenario_seed,
            session: self.session_config,
            channel: self.channel_config.clone(),
            duration_ms: self.duration_ms,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub report: RunReport,
    pub verdict: Option<AttackVerdict>,
}

impl ScenarioRun {
    pub fn transcript(&self) -> &Transcript {
        &self.report.transcript
    }
}

/// Run a scenario to completion. With an attacker configured, the attack is
/// executed and its verdict appended to the transcript.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioRun, ScenarioError> {
    scenario.validate()?;
    match &scenario.attacker {
        None => {
            let (report, _) = World::honest(scenario.world_config())?.run();
            Ok(ScenarioRun { report, verdict: None })
        }
        Some(model) => {
            let (report, verdict) = adversary::run_attack(scenario, model)?;
            Ok(ScenarioRun {
                report,
                verdict: Some(verdict),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_json_round_trip() {
        let s = Scenario::honest(7, SessionConfig::default(), 3_000);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(Scenario::from_json(&text).unwrap(), s);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut s = Scenario::honest(1, SessionConfig::default(), 0);
        assert!(matches!(s.validate(), Err(ScenarioError::Invalid(_))));
        s.duration_ms = 10;
        s.channel_config.loss_rate = 1.5;
        assert!(matches!(s.validate(), Err(ScenarioError::Channel(_))));
        s.channel_config.loss_rate = 0.0;
        s.session_config.ca_round_interval_ms = 0;
        assert!(matches!(s.validate(), Err(ScenarioError::Session(_))));
        assert!(matches!(Scenario::from_json("{}"), Err(ScenarioError::Parse(_))));
    }
}
