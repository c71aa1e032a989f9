//! Lightweight continuous authentication between an edge device and a gateway.
//!
//! The crate is organised bottom-up:
//!
//! - [`crypto`]: hash, length-prefixed HMAC, XOR masking, counter-mode DRBG,
//!   ChaCha20-Poly1305 envelopes and the tunable function `f = t^a + t^b`.
//! - [`channel`]: a simulated wireless link that attaches a synthetic CSI
//!   sample to every delivered packet.
//! - [`protocol`]: the edge and gateway state machines, wire format and
//!   registry persistence.
//! - [`adversary`]: scripted attacker models (replay, impersonation, MiTM,
//!   cloning, Sybil, passive eavesdropping) and their verdicts.
//! - [`harness`]: the discrete-event world, transcripts, scenarios and the
//!   attack suite runner behind the `d2dauth` binary.
//! - [`vectors`]: deterministic golden vectors for every primitive and one
//!   full session, as emitted by `d2dauth vectors`.

pub mod adversary;
pub mod channel;
pub mod crypto;
pub mod harness;
mod hexser;
pub mod protocol;
pub mod vectors;
