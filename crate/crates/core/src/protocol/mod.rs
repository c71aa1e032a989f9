//! Edge and gateway state machines for enrollment, mutual authentication and
//! continuous authentication, plus the wire format they exchange.

pub mod edge;
pub mod gateway;
pub mod registry;
pub mod wire;

use std::fmt;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::crypto::{hash, CryptoError, ExponentBounds, Key256};

pub use edge::{EdgePhase, EdgeState, M7Outcome};
pub use gateway::{enroll, AuthSuccess, CaStep, GatewayPhase, GatewayState, PointXEntry, PointXOutcome, RoundComplete};
pub use registry::{Registry, RegistryEntry};
pub use wire::{MessageKind, ProtocolMessage, WireError};

/// A device identity and its public hash (the form that travels on the wire).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DeviceId {
    raw_id: Vec<u8>,
    id_hash: Key256,
}

impl DeviceId {
    pub fn new(raw_id: impl Into<Vec<u8>>) -> Self {
        let raw_id = raw_id.into();
        let id_hash = hash(&raw_id);
        Self { raw_id, id_hash }
    }

    pub fn raw_id(&self) -> &[u8] {
        &self.raw_id
    }

    pub fn id_hash(&self) -> Key256 {
        self.id_hash
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Session duration T in milliseconds.
    pub session_duration_ms: u64,
    #[serde(default = "default_exponent_max")]
    pub exponent_max: u8,
    pub ca_round_interval_ms: u64,
}

fn default_exponent_max() -> u8 {
    crate::crypto::DEFAULT_EXPONENT_MAX
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            session_duration_ms: 10_000,
            exponent_max: default_exponent_max(),
            ca_round_interval_ms: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("session duration must be positive")]
    ZeroDuration,
    #[error("CA round interval {interval} ms must be shorter than session duration {duration} ms")]
    IntervalTooLong { interval: u64, duration: u64 },
    #[error("CA round interval must be positive")]
    ZeroInterval,
    #[error("exponent_max {0} is below the minimum exponent 2")]
    ExponentMaxTooSmall(u8),
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.session_duration_ms == 0 {
            return Err(ConfigError::ZeroDuration);
        }
        if self.ca_round_interval_ms == 0 {
            return Err(ConfigError::ZeroInterval);
        }
        if self.ca_round_interval_ms >= self.session_duration_ms {
            return Err(ConfigError::IntervalTooLong {
                interval: self.ca_round_interval_ms,
                duration: self.session_duration_ms,
            });
        }
        if self.exponent_max < crate::crypto::EXPONENT_MIN {
            return Err(ConfigError::ExponentMaxTooSmall(self.exponent_max));
        }
        Ok(())
    }

    pub fn exponent_bounds(&self) -> ExponentBounds {
        ExponentBounds::new(self.exponent_max)
    }
}

/// Protocol operations, used to name where a run failed.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Operation {
    Enroll,
    EdgeBeginAuth,
    GwOnM1,
    EdgeOnM2,
    GwOnM3,
    EdgeOnM4,
    GwOnM5,
    EdgeCaStart,
    GwPointX,
    EdgeOnM7,
    GwOnM8,
    Decode,
}

impl Operation {
    pub fn name(self) -> &'static str {
        match self {
            Operation::Enroll => "enroll",
            Operation::EdgeBeginAuth => "edge_begin_auth",
            Operation::GwOnM1 => "gw_on_m1",
            Operation::EdgeOnM2 => "edge_on_m2",
            Operation::GwOnM3 => "gw_on_m3",
            Operation::EdgeOnM4 => "edge_on_m4",
            Operation::GwOnM5 => "gw_on_m5",
            Operation::EdgeCaStart => "edge_ca_start",
            Operation::GwPointX => "gw_point_x",
            Operation::EdgeOnM7 => "edge_on_m7",
            Operation::GwOnM8 => "gw_on_m8",
            Operation::Decode => "decode",
        }
    }

    /// Operations whose success means the peer was authenticated for a
    /// protocol phase or a CA round.
    pub fn completes_phase(self) -> bool {
        matches!(
            self,
            Operation::GwOnM3
                | Operation::EdgeOnM4
                | Operation::GwOnM5
                | Operation::GwPointX
                | Operation::EdgeOnM7
                | Operation::GwOnM8
        )
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("edge identity not registered")]
    UnknownEdge,
    #[error("gateway identity does not match the enrolled gateway")]
    WrongGateway,
    #[error("HMAC tag mismatch")]
    TagMismatch,
    #[error("AEAD envelope failed to authenticate")]
    AeadFailure,
    #[error("acknowledgement was zero")]
    AckZero,
    #[error("echoed CSI does not match the measured CSI")]
    CsiMismatch,
    #[error("echoed exponent does not match the exponent sent")]
    ExponentEchoMismatch,
    #[error("counter mismatch")]
    CounterMismatch,
    #[error("function value mismatch")]
    FunctionMismatch,
    #[error("edge identity already enrolled")]
    DuplicateEnrollment,
    #[error("message not accepted in phase {phase}")]
    OutOfPhase { phase: &'static str },
    #[error("exponent {0} outside configured bounds")]
    ExponentOutOfBounds(u8),
    #[error("malformed message: {0}")]
    Malformed(#[from] WireError),
    #[error("no response before timeout")]
    Timeout,
}

impl ProtocolError {
    /// Stable identifier used in transcripts and reports.
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::UnknownEdge => "UnknownEdge",
            ProtocolError::WrongGateway => "WrongGateway",
            ProtocolError::TagMismatch => "TagMismatch",
            ProtocolError::AeadFailure => "AeadFailure",
            ProtocolError::AckZero => "AckZero",
            ProtocolError::CsiMismatch => "CsiMismatch",
            ProtocolError::ExponentEchoMismatch => "ExponentEchoMismatch",
            ProtocolError::CounterMismatch => "CounterMismatch",
            ProtocolError::FunctionMismatch => "FunctionMismatch",
            ProtocolError::DuplicateEnrollment => "DuplicateEnrollment",
            ProtocolError::OutOfPhase { .. } => "OutOfPhase",
            ProtocolError::ExponentOutOfBounds(_) => "ExponentOutOfBounds",
            ProtocolError::Malformed(_) => "MalformedMessage",
            ProtocolError::Timeout => "Timeout",
        }
    }
}

impl From<CryptoError> for ProtocolError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::AuthFailure | CryptoError::TooShort => ProtocolError::AeadFailure,
            CryptoError::ExponentOutOfBounds(v) => ProtocolError::ExponentOutOfBounds(v),
        }
    }
}

/// Where a run stopped: the operation that rejected input and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailurePoint {
    pub op: Operation,
    pub error: ProtocolError,
}

impl FailurePoint {
    pub fn new(op: Operation, error: ProtocolError) -> Self {
        Self { op, error }
    }

    pub fn matches(&self, op: Operation, code: &str) -> bool {
        self.op == op && self.error.code() == code
    }
}

impl fmt::Display for FailurePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.op, self.error.code())
    }
}

impl Serialize for FailurePoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("FailurePoint", 2)?;
        st.serialize_field("op", self.op.name())?;
        st.serialize_field("error", self.error.code())?;
        st.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_config_validation() {
        assert!(SessionConfig::default().validate().is_ok());
        let mut c = SessionConfig::default();
        c.ca_round_interval_ms = c.session_duration_ms;
        assert!(matches!(c.validate(), Err(ConfigError::IntervalTooLong { .. })));
        c.session_duration_ms = 0;
        assert_eq!(c.validate(), Err(ConfigError::ZeroDuration));
        let c = SessionConfig {
            exponent_max: 1,
            ..SessionConfig::default()
        };
        assert_eq!(c.validate(), Err(ConfigError::ExponentMaxTooSmall(1)));
    }

    #[test]
    fn device_id_hash_is_consistent() {
        let id = DeviceId::new(b"edge-7".to_vec());
        assert_eq!(id.id_hash(), hash(b"edge-7"));
        assert_eq!(id.raw_id(), b"edge-7");
    }

    #[test]
    fn failure_point_serializes_by_name() {
        let fp = FailurePoint::new(Operation::GwOnM3, ProtocolError::TagMismatch);
        assert_eq!(
            serde_json::to_string(&fp).unwrap(),
            r#"{"op":"gw_on_m3","error":"TagMismatch"}"#
        );
        assert!(fp.matches(Operation::GwOnM3, "TagMismatch"));
    }
}
