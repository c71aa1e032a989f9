//! Gateway state machine.
//!
//! The gateway keeps one session per edge id hash. A new M1 for an edge
//! replaces whatever session that edge had, so handshakes under one identity
//! are serialized. Registry credentials change only when M5 verifies; a
//! handshake that aborts earlier leaves the stored E_init and seed untouched.

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};
use serde::Serialize;

use super::edge::EdgeState;
use super::registry::{Registry, RegistryEntry};
use super::wire::{M5Plain, M6Plain, M7Plain, M8Plain, ProtocolMessage, WireError};
use super::{DeviceId, ProtocolError, SessionConfig};
use crate::channel::DeliveryEvent;
use crate::crypto::{
    aead_open, aead_seal, compute_f, derive_init_key, hmac_tag, prng_draw, xor_mask, CsiSample, Exponent, FWrap64,
    Key256, Rand256, Seed,
};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub enum GatewayPhase {
    Idle,
    AwaitM3,
    AwaitM5,
    InSession,
    Aborted,
}

impl GatewayPhase {
    pub fn name(self) -> &'static str {
        match self {
            GatewayPhase::Idle => "Idle",
            GatewayPhase::AwaitM3 => "AwaitM3",
            GatewayPhase::AwaitM5 => "AwaitM5",
            GatewayPhase::InSession => "InSession",
            GatewayPhase::Aborted => "Aborted",
        }
    }
}

/// Position inside the continuous-authentication loop.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub enum CaStep {
    AwaitM6,
    AwaitM8,
    /// Round complete; waiting for the next Point X tick.
    Ready,
}

#[derive(Clone, Debug)]
pub struct GatewaySession {
    phase: GatewayPhase,
    step: CaStep,
    c_i: CsiSample,
    r: Rand256,
    e_key: Key256,
    sn_key: Key256,
    a: Option<Exponent>,
    f: FWrap64,
    ctr_g: u64,
    t_m: u64,
}

impl GatewaySession {
    fn handshake(c_i: CsiSample, r: Rand256) -> Self {
        Self {
            phase: GatewayPhase::AwaitM3,
            step: CaStep::AwaitM6,
            c_i,
            r,
            e_key: Key256::UNSET,
            sn_key: Key256::UNSET,
            a: None,
            f: FWrap64::default(),
            ctr_g: 0,
            t_m: 0,
        }
    }

    pub fn phase(&self) -> GatewayPhase {
        self.phase
    }

    pub fn step(&self) -> CaStep {
        self.step
    }

    pub fn c_i(&self) -> CsiSample {
        self.c_i
    }

    pub fn r(&self) -> Rand256 {
        self.r
    }

    pub fn e_key(&self) -> Key256 {
        self.e_key
    }

    pub fn sn_key(&self) -> Key256 {
        self.sn_key
    }

    pub fn exponent(&self) -> Option<Exponent> {
        self.a
    }

    pub fn ctr_g(&self) -> u64 {
        self.ctr_g
    }

    pub fn t_m(&self) -> u64 {
        self.t_m
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct AuthSuccess {
    pub t_m: u64,
    pub session_duration_ms: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RoundComplete {
    pub ctr: u64,
}

/// How Point X is entered: from the edge's M6, or from the gateway's own loop.
#[derive(Clone, Copy, Debug)]
pub enum PointXEntry<'a> {
    M6(&'a ProtocolMessage),
    Loop,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum PointXOutcome {
    /// M7 with ack=1: a new CA round.
    Round(ProtocolMessage),
    /// M7 with ack=0: the session expired and has been dropped.
    Expired(ProtocolMessage),
}

impl PointXOutcome {
    pub fn message(&self) -> &ProtocolMessage {
        match self {
            PointXOutcome::Round(m) | PointXOutcome::Expired(m) => m,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GatewayState {
    id: DeviceId,
    config: SessionConfig,
    registry: Registry,
    sessions: BTreeMap<Key256, GatewaySession>,
}

/// Enroll one edge with a fresh gateway over the trusted setup path.
pub fn enroll(
    edge: &DeviceId,
    gw: &DeviceId,
    seed: Seed,
    config: SessionConfig,
) -> Result<(EdgeState, GatewayState), ProtocolError> {
    let mut gateway = GatewayState::new(gw.clone(), config);
    let edge_state = gateway.enroll(edge, seed)?;
    Ok((edge_state, gateway))
}

impl GatewayState {
    pub fn new(id: DeviceId, config: SessionConfig) -> Self {
        Self::with_registry(id, config, Registry::new())
    }

    pub fn with_registry(id: DeviceId, config: SessionConfig, registry: Registry) -> Self {
        Self {
            id,
            config,
            registry,
            sessions: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &DeviceId {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn session(&self, edge: &Key256) -> Option<&GatewaySession> {
        self.sessions.get(edge)
    }

    pub fn phase(&self, edge: &Key256) -> GatewayPhase {
        self.sessions.get(edge).map_or(GatewayPhase::Idle, |s| s.phase)
    }

    /// Derive E_init from seed draw 0 and store the edge. Returns the registry record.
    pub fn enroll_record(&mut self, edge: &DeviceId, seed: Seed) -> Result<RegistryEntry, ProtocolError> {
        let (r0, next) = prng_draw(&seed);
        let entry = RegistryEntry {
            e_init: derive_init_key(edge.raw_id(), &r0),
            seed: next,
        };
        self.registry.insert_new(edge.id_hash(), entry)?;
        Ok(entry)
    }

    /// Enroll an edge and return its provisioned state machine.
    pub fn enroll(&mut self, edge: &DeviceId, seed: Seed) -> Result<EdgeState, ProtocolError> {
        let entry = self.enroll_record(edge, seed)?;
        Ok(EdgeState::provisioned(
            edge.clone(),
            self.id.id_hash(),
            entry.e_init,
            entry.seed,
            self.config,
        ))
    }

    /// Drop the edge's session, e.g. on timeout.
    pub fn abort_session(&mut self, edge: &Key256) {
        if let Some(s) = self.sessions.get_mut(edge) {
            *s = GatewaySession {
                phase: GatewayPhase::Aborted,
                ..GatewaySession::handshake(CsiSample::default(), Rand256::default())
            };
        }
    }

    fn fail(&mut self, edge: &Key256, err: ProtocolError) -> ProtocolError {
        self.abort_session(edge);
        err
    }

    fn out_of_phase(&mut self, edge: &Key256) -> ProtocolError {
        let err = ProtocolError::OutOfPhase {
            phase: self.phase(edge).name(),
        };
        self.fail(edge, err)
    }

    fn expect_phase(&mut self, edge: &Key256, phase: GatewayPhase) -> Result<(), ProtocolError> {
        if self.phase(edge) == phase {
            Ok(())
        } else {
            Err(self.out_of_phase(edge))
        }
    }

    pub fn on_m1_event(&mut self, ev: &DeliveryEvent) -> Result<ProtocolMessage, ProtocolError> {
        self.on_m1(&ev.message, ev.csi_at_receiver)
    }

    /// Look the edge up, record C_i, draw r, and answer with M2.
    pub fn on_m1(&mut self, msg: &ProtocolMessage, csi: CsiSample) -> Result<ProtocolMessage, ProtocolError> {
        let ProtocolMessage::M1 { edge_id_hash } = msg else {
            return Err(ProtocolError::OutOfPhase { phase: "Idle" });
        };
        // Unknown edges must go through enrollment first.
        let entry = self.registry.get(edge_id_hash).ok_or(ProtocolError::UnknownEdge)?;
        let (r, _) = prng_draw(&entry.seed);
        self.sessions.insert(*edge_id_hash, GatewaySession::handshake(csi, r));
        Ok(ProtocolMessage::M2 {
            gw_id_hash: self.id.id_hash(),
        })
    }

    /// Verify the edge's tag, recover C_r, answer with M4.
    pub fn on_m3(&mut self, msg: &ProtocolMessage) -> Result<ProtocolMessage, ProtocolError> {
        let ProtocolMessage::M3 { edge_id_hash, m_a, tag } = msg else {
            return Err(ProtocolError::OutOfPhase { phase: "unknown" });
        };
        let edge = *edge_id_hash;
        let Some(entry) = self.registry.get(&edge).copied() else {
            return Err(ProtocolError::UnknownEdge);
        };
        self.expect_phase(&edge, GatewayPhase::AwaitM3)?;
        let gw_id_hash = self.id.id_hash();
        let session = self.sessions.get_mut(&edge).expect("phase check found a session");
        let r = session.r;
        let expected = hmac_tag(&entry.e_init, &[edge.as_bytes(), m_a, r.as_bytes()]);
        if expected != *tag {
            return Err(self.fail(&edge, ProtocolError::TagMismatch));
        }
        let c_r = xor_mask(m_a, &entry.e_init, &r);
        session.e_key = Key256::from_bytes(c_r);
        let m_b = xor_mask(session.c_i.as_bytes(), &session.e_key, &r);
        let tag4 = hmac_tag(&session.e_key, &[&m_b, gw_id_hash.as_bytes(), r.as_bytes()]);
        session.phase = GatewayPhase::AwaitM5;
        Ok(ProtocolMessage::M4 {
            gw_id_hash,
            tag: tag4,
            m_b,
        })
    }

    /// Open M5, confirm the echoed C_i, adopt the edge's new seed and start the session at `now`.
    pub fn on_m5(&mut self, edge: &Key256, msg: &ProtocolMessage, now: u64) -> Result<AuthSuccess, ProtocolError> {
        let ProtocolMessage::M5 { envelope } = msg else {
            return Err(self.out_of_phase(edge));
        };
        self.expect_phase(edge, GatewayPhase::AwaitM5)?;
        let session = self.sessions.get(edge).expect("phase check found a session");
        let sn_key = session.e_key.xor(&Key256::from(session.c_i));
        let c_i = session.c_i;
        let plain = match aead_open(&sn_key, envelope) {
            Ok(p) => p,
            Err(e) => return Err(self.fail(edge, e.into())),
        };
        let m5 = M5Plain::decode(&plain).map_err(|e| self.fail(edge, e.into()))?;
        if m5.ack != 1 {
            return Err(self.fail(edge, ProtocolError::AckZero));
        }
        if m5.c_i != c_i {
            return Err(self.fail(edge, ProtocolError::CsiMismatch));
        }
        self.registry.replace(
            *edge,
            RegistryEntry {
                e_init: sn_key,
                seed: Seed::new(m5.new_seed),
            },
        );
        let session = self.sessions.get_mut(edge).expect("session present");
        session.sn_key = sn_key;
        session.ctr_g = 1;
        session.t_m = now;
        session.a = None;
        session.step = CaStep::AwaitM6;
        session.phase = GatewayPhase::InSession;
        Ok(AuthSuccess {
            t_m: now,
            session_duration_ms: self.config.session_duration_ms,
        })
    }

    /// Point X: check session expiry and issue the next M7.
    pub fn point_x<R: RngCore + CryptoRng>(
        &mut self,
        edge: &Key256,
        entry: PointXEntry<'_>,
        now: u64,
        rng: &mut R,
    ) -> Result<PointXOutcome, ProtocolError> {
        self.expect_phase(edge, GatewayPhase::InSession)?;
        let bounds = self.config.exponent_bounds();
        let session = self.sessions.get(edge).expect("phase check found a session");
        let (sn_key, r) = (session.sn_key, session.r);

        let claimed_id = match entry {
            PointXEntry::M6(msg) => {
                let ProtocolMessage::M6 { envelope } = msg else {
                    return Err(self.out_of_phase(edge));
                };
                if session.step != CaStep::AwaitM6 {
                    return Err(self.out_of_phase(edge));
                }
                let plain = aead_open(&sn_key, envelope).map_err(|e| self.fail(edge, e.into()))?;
                let m6 = M6Plain::decode(&plain).map_err(|e| self.fail(edge, e.into()))?;
                let Some(a) = Exponent::from_block(&xor_mask(&m6.m_c, &sn_key, &r)) else {
                    return Err(self.fail(edge, WireError::BadPadding.into()));
                };
                if let Err(e) = bounds.check(a) {
                    return Err(self.fail(edge, e.into()));
                }
                self.sessions.get_mut(edge).expect("session present").a = Some(a);
                m6.edge_id_hash
            }
            PointXEntry::Loop => {
                if session.step != CaStep::Ready {
                    return Err(self.out_of_phase(edge));
                }
                *edge
            }
        };

        let session = self.sessions.get(edge).expect("session present");
        let a = session.a.expect("exponent set before the loop runs");
        let elapsed = now.saturating_sub(session.t_m);
        if elapsed > self.config.session_duration_ms {
            let m7 = M7Plain {
                ack: 0,
                f: FWrap64(0),
                a_echo: a,
                t: 0,
                m_d: [0; 32],
                ctr_g: session.ctr_g,
            };
            let envelope = aead_seal(&sn_key, &m7.encode(), rng);
            self.sessions.remove(edge);
            return Ok(PointXOutcome::Expired(ProtocolMessage::M7 { envelope }));
        }
        if claimed_id != *edge || !self.registry.contains(&claimed_id) {
            return Err(self.fail(edge, ProtocolError::UnknownEdge));
        }
        let b = bounds.sample(rng);
        let session = self.sessions.get_mut(edge).expect("session present");
        session.ctr_g += 1;
        let f = compute_f(elapsed, a, b, &bounds).expect("exponents validated against bounds");
        session.f = f;
        let m7 = M7Plain {
            ack: 1,
            f,
            a_echo: a,
            t: elapsed,
            m_d: xor_mask(&b.to_block(), &sn_key, &r),
            ctr_g: session.ctr_g,
        };
        session.step = CaStep::AwaitM8;
        Ok(PointXOutcome::Round(ProtocolMessage::M7 {
            envelope: aead_seal(&sn_key, &m7.encode(), rng),
        }))
    }

    /// Check the edge's answer; on success the session waits for the next Point X.
    pub fn on_m8(&mut self, edge: &Key256, msg: &ProtocolMessage) -> Result<RoundComplete, ProtocolError> {
        let ProtocolMessage::M8 { envelope } = msg else {
            return Err(self.out_of_phase(edge));
        };
        self.expect_phase(edge, GatewayPhase::InSession)?;
        let session = self.sessions.get(edge).expect("phase check found a session");
        if session.step != CaStep::AwaitM8 {
            return Err(self.out_of_phase(edge));
        }
        let (sn_key, ctr_g, f) = (session.sn_key, session.ctr_g, session.f);
        let plain = aead_open(&sn_key, envelope).map_err(|e| self.fail(edge, e.into()))?;
        let m8 = M8Plain::decode(&plain).map_err(|e| self.fail(edge, e.into()))?;
        if m8.ctr_e != ctr_g {
            return Err(self.fail(edge, ProtocolError::CounterMismatch));
        }
        if m8.f != f {
            return Err(self.fail(edge, ProtocolError::FunctionMismatch));
        }
        self.sessions.get_mut(edge).expect("session present").step = CaStep::Ready;
        Ok(RoundComplete { ctr: ctr_g })
    }
}
