//! JSON-lines run transcripts.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::protocol::FailurePoint;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Send,
    Recv,
    /// Lost on the channel.
    Drop,
    /// Taken off the air by the attacker.
    Intercept,
    Inject,
    State,
    AuthSuccess,
    RoundComplete,
    Expiry,
    Abort,
    Verdict,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct TranscriptEvent {
    pub t: u64,
    pub seq: u64,
    pub actor: &'static str,
    pub kind: EventKind,
    pub summary: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_point: Option<FailurePoint>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub tainted: bool,
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Transcript {
    events: Vec<TranscriptEvent>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[TranscriptEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    fn push_event(&mut self, mut ev: TranscriptEvent) {
        if let Some(last) = self.events.last() {
            assert!(ev.t >= last.t, "transcript time went backwards");
        }
        ev.seq = self.events.len() as u64;
        self.events.push(ev);
    }

    pub fn push(&mut self, t: u64, actor: &'static str, kind: EventKind, summary: impl Into<String>, tainted: bool) {
        self.push_event(TranscriptEvent {
            t,
            seq: 0,
            actor,
            kind,
            summary: summary.into(),
            failure_point: None,
            tainted,
        });
    }

    pub fn abort(&mut self, t: u64, actor: &'static str, point: FailurePoint, tainted: bool) {
        self.push_event(TranscriptEvent {
            t,
            seq: 0,
            actor,
            kind: EventKind::Abort,
            summary: point.error.to_string(),
            failure_point: Some(point),
            tainted,
        });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_jsonl())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Operation, ProtocolError};

    #[test]
    fn jsonl_shape() {
        let mut t = Transcript::new();
        t.push(0, "edge", EventKind::Send, "M1 edge=00000000", false);
        t.abort(
            5,
            "gateway",
            FailurePoint::new(Operation::GwOnM3, ProtocolError::TagMismatch),
            true,
        );
        let text = t.to_jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            r#"{"t":0,"seq":0,"actor":"edge","kind":"send","summary":"M1 edge=00000000"}"#
        );
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(v["seq"], 1);
        assert_eq!(v["failure_point"]["op"], "gw_on_m3");
        assert_eq!(v["failure_point"]["error"], "TagMismatch");
        assert_eq!(v["tainted"], true);
    }

    #[test]
    #[should_panic(expected = "backwards")]
    fn time_is_monotone() {
        let mut t = Transcript::new();
        t.push(10, "edge", EventKind::State, "a", false);
        t.push(9, "edge", EventKind::State, "b", false);
    }
}
