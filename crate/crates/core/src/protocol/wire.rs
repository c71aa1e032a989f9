//! Binary layout of M1..M8.
//!
//! Every message is a 1-byte type tag followed by fixed-width fields in the
//! declared order. Integers are big-endian. M5..M8 carry an AEAD envelope
//! (`nonce || ciphertext || tag`) whose plaintext layouts are defined by the
//! `*Plain` types below, so every message type has exactly one valid length.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{CsiSample, Exponent, FWrap64, Key256, BLOCK_LEN, ENVELOPE_OVERHEAD};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageKind {
    M1 = 1,
    M2 = 2,
    M3 = 3,
    M4 = 4,
    M5 = 5,
    M6 = 6,
    M7 = 7,
    M8 = 8,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::M1,
        MessageKind::M2,
        MessageKind::M3,
        MessageKind::M4,
        MessageKind::M5,
        MessageKind::M6,
        MessageKind::M7,
        MessageKind::M8,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(usize::from(tag).wrapping_sub(1)).copied()
    }

    /// Total encoded length including the tag byte.
    pub fn wire_len(self) -> usize {
        1 + match self {
            MessageKind::M1 | MessageKind::M2 => BLOCK_LEN,
            MessageKind::M3 | MessageKind::M4 => 3 * BLOCK_LEN,
            MessageKind::M5 => M5Plain::LEN + ENVELOPE_OVERHEAD,
            MessageKind::M6 => M6Plain::LEN + ENVELOPE_OVERHEAD,
            MessageKind::M7 => M7Plain::LEN + ENVELOPE_OVERHEAD,
            MessageKind::M8 => M8Plain::LEN + ENVELOPE_OVERHEAD,
        }
    }

    pub fn envelope_len(self) -> Option<usize> {
        match self {
            MessageKind::M5 | MessageKind::M6 | MessageKind::M7 | MessageKind::M8 => Some(self.wire_len() - 1),
            _ => None,
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("empty message")]
    Empty,
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("non-zero exponent padding")]
    BadPadding,
    #[error("{what}: expected {expected} bytes, got {actual}")]
    WrongLength {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ProtocolMessage {
    M1 {
        edge_id_hash: Key256,
    },
    M2 {
        gw_id_hash: Key256,
    },
    M3 {
        edge_id_hash: Key256,
        m_a: [u8; BLOCK_LEN],
        tag: Key256,
    },
    M4 {
        gw_id_hash: Key256,
        tag: Key256,
        m_b: [u8; BLOCK_LEN],
    },
    M5 {
        envelope: Vec<u8>,
    },
    M6 {
        envelope: Vec<u8>,
    },
    M7 {
        envelope: Vec<u8>,
    },
    M8 {
        envelope: Vec<u8>,
    },
}

fn block(bytes: &[u8], at: usize) -> [u8; BLOCK_LEN] {
    bytes[at..at + BLOCK_LEN].try_into().unwrap()
}

impl ProtocolMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            ProtocolMessage::M1 { .. } => MessageKind::M1,
            ProtocolMessage::M2 { .. } => MessageKind::M2,
            ProtocolMessage::M3 { .. } => MessageKind::M3,
            ProtocolMessage::M4 { .. } => MessageKind::M4,
            ProtocolMessage::M5 { .. } => MessageKind::M5,
            ProtocolMessage::M6 { .. } => MessageKind::M6,
            ProtocolMessage::M7 { .. } => MessageKind::M7,
            ProtocolMessage::M8 { .. } => MessageKind::M8,
        }
    }

    pub fn envelope(&self) -> Option<&[u8]> {
        match self {
            ProtocolMessage::M5 { envelope }
            | ProtocolMessage::M6 { envelope }
            | ProtocolMessage::M7 { envelope }
            | ProtocolMessage::M8 { envelope } => Some(envelope),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let kind = self.kind();
        let mut out = Vec::with_capacity(kind.wire_len());
        out.push(kind.tag());
        match self {
            ProtocolMessage::M1 { edge_id_hash } => out.extend_from_slice(edge_id_hash.as_bytes()),
            ProtocolMessage::M2 { gw_id_hash } => out.extend_from_slice(gw_id_hash.as_bytes()),
            ProtocolMessage::M3 { edge_id_hash, m_a, tag } => {
                out.extend_from_slice(edge_id_hash.as_bytes());
                out.extend_from_slice(m_a);
                out.extend_from_slice(tag.as_bytes());
            }
            ProtocolMessage::M4 { gw_id_hash, tag, m_b } => {
                out.extend_from_slice(gw_id_hash.as_bytes());
                out.extend_from_slice(tag.as_bytes());
                out.extend_from_slice(m_b);
            }
            ProtocolMessage::M5 { envelope }
            | ProtocolMessage::M6 { envelope }
            | ProtocolMessage::M7 { envelope }
            | ProtocolMessage::M8 { envelope } => out.extend_from_slice(envelope),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let (&tag, body) = bytes.split_first().ok_or(WireError::Empty)?;
        let kind = MessageKind::from_tag(tag).ok_or(WireError::UnknownTag(tag))?;
        if bytes.len() != kind.wire_len() {
            return Err(WireError::WrongLength {
                what: "message",
                expected: kind.wire_len(),
                actual: bytes.len(),
            });
        }
        Ok(match kind {
            MessageKind::M1 => ProtocolMessage::M1 {
                edge_id_hash: Key256::from_bytes(block(body, 0)),
            },
            MessageKind::M2 => ProtocolMessage::M2 {
                gw_id_hash: Key256::from_bytes(block(body, 0)),
            },
            MessageKind::M3 => ProtocolMessage::M3 {
                edge_id_hash: Key256::from_bytes(block(body, 0)),
                m_a: block(body, 32),
                tag: Key256::from_bytes(block(body, 64)),
            },
            MessageKind::M4 => ProtocolMessage::M4 {
                gw_id_hash: Key256::from_bytes(block(body, 0)),
                tag: Key256::from_bytes(block(body, 32)),
                m_b: block(body, 64),
            },
            MessageKind::M5 => ProtocolMessage::M5 {
                envelope: body.to_vec(),
            },
            MessageKind::M6 => ProtocolMessage::M6 {
                envelope: body.to_vec(),
            },
            MessageKind::M7 => ProtocolMessage::M7 {
                envelope: body.to_vec(),
            },
            MessageKind::M8 => ProtocolMessage::M8 {
                envelope: body.to_vec(),
            },
        })
    }

    /// Short human-readable description used in transcripts.
    pub fn summary(&self) -> String {
        let short = |b: &[u8]| hex::encode(&b[..4]);
        match self {
            ProtocolMessage::M1 { edge_id_hash } => format!("M1 edge={}", short(edge_id_hash.as_bytes())),
            ProtocolMessage::M2 { gw_id_hash } => format!("M2 gw={}", short(gw_id_hash.as_bytes())),
            ProtocolMessage::M3 { edge_id_hash, m_a, tag } => format!(
                "M3 edge={} m_a={} tag={}",
                short(edge_id_hash.as_bytes()),
                short(m_a),
                short(tag.as_bytes())
            ),
            ProtocolMessage::M4 { gw_id_hash, tag, m_b } => format!(
                "M4 gw={} tag={} m_b={}",
                short(gw_id_hash.as_bytes()),
                short(tag.as_bytes()),
                short(m_b)
            ),
            other => {
                let env = other.envelope().unwrap_or_default();
                format!("{} env={}B nonce={}", other.kind(), env.len(), short(env))
            }
        }
    }
}

fn check_len(what: &'static str, bytes: &[u8], expected: usize) -> Result<(), WireError> {
    if bytes.len() == expected {
        Ok(())
    } else {
        Err(WireError::WrongLength {
            what,
            expected,
            actual: bytes.len(),
        })
    }
}

fn be64(bytes: &[u8], at: usize) -> u64 {
    u64::from_be_bytes(bytes[at..at + 8].try_into().unwrap())
}

/// `c_i' (32) || new_seed (32) || ack (1)`
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct M5Plain {
    pub c_i: CsiSample,
    pub new_seed: [u8; BLOCK_LEN],
    pub ack: u8,
}

impl M5Plain {
    pub const LEN: usize = 65;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.extend_from_slice(self.c_i.as_bytes());
        out.extend_from_slice(&self.new_seed);
        out.push(self.ack);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        check_len("M5 plaintext", bytes, Self::LEN)?;
        Ok(Self {
            c_i: CsiSample::from_bytes(block(bytes, 0)),
            new_seed: block(bytes, 32),
            ack: bytes[64],
        })
    }
}

/// `m_c (32) || edge_id_hash (32)`
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct M6Plain {
    pub m_c: [u8; BLOCK_LEN],
    pub edge_id_hash: Key256,
}

impl M6Plain {
    pub const LEN: usize = 64;

    pub fn encode(&self) -> Vec<u8> {
        [self.m_c.as_slice(), self.edge_id_hash.as_bytes()].concat()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        check_len("M6 plaintext", bytes, Self::LEN)?;
        Ok(Self {
            m_c: block(bytes, 0),
            edge_id_hash: Key256::from_bytes(block(bytes, 32)),
        })
    }
}

/// `ack (1) || f (8) || a' (1) || t (8) || m_d (32) || ctr_g (8)`
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct M7Plain {
    pub ack: u8,
    pub f: FWrap64,
    pub a_echo: Exponent,
    pub t: u64,
    pub m_d: [u8; BLOCK_LEN],
    pub ctr_g: u64,
}

impl M7Plain {
    pub const LEN: usize = 58;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.push(self.ack);
        out.extend_from_slice(&self.f.0.to_be_bytes());
        out.push(self.a_echo.value());
        out.extend_from_slice(&self.t.to_be_bytes());
        out.extend_from_slice(&self.m_d);
        out.extend_from_slice(&self.ctr_g.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        check_len("M7 plaintext", bytes, Self::LEN)?;
        Ok(Self {
            ack: bytes[0],
            f: FWrap64(be64(bytes, 1)),
            a_echo: Exponent::new(bytes[9]),
            t: be64(bytes, 10),
            m_d: block(bytes, 18),
            ctr_g: be64(bytes, 50),
        })
    }
}

/// `f' (8) || ctr_e (8)`
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct M8Plain {
    pub f: FWrap64,
    pub ctr_e: u64,
}

impl M8Plain {
    pub const LEN: usize = 16;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.extend_from_slice(&self.f.0.to_be_bytes());
        out.extend_from_slice(&self.ctr_e.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        check_len("M8 plaintext", bytes, Self::LEN)?;
        Ok(Self {
            f: FWrap64(be64(bytes, 0)),
            ctr_e: be64(bytes, 8),
        })
    }
}
