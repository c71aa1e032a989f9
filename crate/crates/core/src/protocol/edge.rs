//! Edge-device state machine.
//!
//! ```text
//! Init/Expired/Aborted --begin_auth--> AwaitM2 --M2--> AwaitM4 --M4--> AwaitM7
//! AwaitM7 --ca_start--> AwaitM7 (exponent chosen) --M7(ack=1)--> AwaitM7
//! AwaitM7 --M7(ack=0)--> Expired
//! ```
//! Any verification failure or out-of-phase message moves the edge to `Aborted`.

use rand::{CryptoRng, RngCore};
use serde::Serialize;

use super::wire::{M5Plain, M6Plain, M7Plain, M8Plain, ProtocolMessage, WireError};
use super::{DeviceId, ProtocolError, SessionConfig};
use crate::channel::DeliveryEvent;
use crate::crypto::{
    aead_open, aead_seal, compute_f, hmac_tag, prng_draw, xor_mask, CsiSample, Exponent, Key256, Rand256, Seed,
    BLOCK_LEN,
};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub enum EdgePhase {
    Init,
    AwaitM2,
    AwaitM4,
    AwaitM7,
    /// The gateway reported session expiry; mutual authentication must rerun.
    Expired,
    Aborted,
}

impl EdgePhase {
    pub fn name(self) -> &'static str {
        match self {
            EdgePhase::Init => "Init",
            EdgePhase::AwaitM2 => "AwaitM2",
            EdgePhase::AwaitM4 => "AwaitM4",
            EdgePhase::AwaitM7 => "AwaitM7",
            EdgePhase::Expired => "Expired",
            EdgePhase::Aborted => "Aborted",
        }
    }

    pub fn in_handshake(self) -> bool {
        matches!(self, EdgePhase::AwaitM2 | EdgePhase::AwaitM4)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum M7Outcome {
    Respond(ProtocolMessage),
    GoToMutualAuth,
}

#[derive(Clone, Debug)]
pub struct EdgeState {
    id: DeviceId,
    gw_id_hash: Key256,
    config: SessionConfig,
    phase: EdgePhase,
    e_init: Key256,
    e_key: Key256,
    sn_key: Key256,
    seed: Seed,
    // Seed advanced by this handshake's draw; committed only when M4 verifies.
    pending_seed: Option<Seed>,
    r: Rand256,
    c_r: CsiSample,
    a: Option<Exponent>,
    ctr_e: u64,
}

impl EdgeState {
    /// Build an edge from enrollment output.
    pub fn provisioned(id: DeviceId, gw_id_hash: Key256, e_init: Key256, seed: Seed, config: SessionConfig) -> Self {
        Self {
            id,
            gw_id_hash,
            config,
            phase: EdgePhase::Init,
            e_init,
            e_key: Key256::UNSET,
            sn_key: Key256::UNSET,
            seed,
            pending_seed: None,
            r: Rand256::default(),
            c_r: CsiSample::default(),
            a: None,
            ctr_e: 0,
        }
    }

    pub fn id(&self) -> &DeviceId {
        &self.id
    }

    pub fn gw_id_hash(&self) -> Key256 {
        self.gw_id_hash
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn phase(&self) -> EdgePhase {
        self.phase
    }

    pub fn e_init(&self) -> Key256 {
        self.e_init
    }

    pub fn sn_key(&self) -> Key256 {
        self.sn_key
    }

    pub fn seed(&self) -> &Seed {
        &self.seed
    }

    pub fn r(&self) -> Rand256 {
        self.r
    }

    pub fn c_r(&self) -> CsiSample {
        self.c_r
    }

    pub fn exponent(&self) -> Option<Exponent> {
        self.a
    }

    pub fn ctr_e(&self) -> u64 {
        self.ctr_e
    }

    fn out_of_phase(&mut self) -> ProtocolError {
        let err = ProtocolError::OutOfPhase {
            phase: self.phase.name(),
        };
        self.abort();
        err
    }

    fn fail(&mut self, err: ProtocolError) -> ProtocolError {
        self.abort();
        err
    }

    /// Drop any in-progress handshake or CA round. Keys adopted by a completed
    /// M4 verification are kept.
    pub fn abort(&mut self) {
        self.phase = EdgePhase::Aborted;
        self.pending_seed = None;
        self.a = None;
    }

    /// Emit M1 = H(ID_edge).
    pub fn begin_auth(&mut self) -> Result<ProtocolMessage, ProtocolError> {
        match self.phase {
            EdgePhase::Init | EdgePhase::Expired | EdgePhase::Aborted => {}
            phase => return Err(ProtocolError::OutOfPhase { phase: phase.name() }),
        }
        self.pending_seed = None;
        self.a = None;
        self.phase = EdgePhase::AwaitM2;
        Ok(ProtocolMessage::M1 {
            edge_id_hash: self.id.id_hash(),
        })
    }

    pub fn on_m2_event(&mut self, ev: &DeliveryEvent) -> Result<ProtocolMessage, ProtocolError> {
        self.on_m2(&ev.message, ev.csi_at_receiver)
    }

    /// Handle M2 measured with CSI `csi`; emit M3.
    pub fn on_m2(&mut self, msg: &ProtocolMessage, csi: CsiSample) -> Result<ProtocolMessage, ProtocolError> {
        let ProtocolMessage::M2 { gw_id_hash } = msg else {
            return Err(self.out_of_phase());
        };
        if self.phase != EdgePhase::AwaitM2 {
            return Err(self.out_of_phase());
        }
        if *gw_id_hash != self.gw_id_hash {
            return Err(self.fail(ProtocolError::WrongGateway));
        }
        self.c_r = csi;
        let (r, advanced) = prng_draw(&self.seed);
        self.r = r;
        self.pending_seed = Some(advanced);
        let edge_id_hash = self.id.id_hash();
        let m_a = xor_mask(self.c_r.as_bytes(), &self.e_init, &r);
        let tag = hmac_tag(&self.e_init, &[edge_id_hash.as_bytes(), &m_a, r.as_bytes()]);
        self.phase = EdgePhase::AwaitM4;
        Ok(ProtocolMessage::M3 { edge_id_hash, m_a, tag })
    }

    /// Verify the gateway via M4, derive SN_key, rotate E_init and the seed, emit M5.
    pub fn on_m4<R: RngCore + CryptoRng>(
        &mut self,
        msg: &ProtocolMessage,
        rng: &mut R,
    ) -> Result<ProtocolMessage, ProtocolError> {
        let ProtocolMessage::M4 { gw_id_hash, tag, m_b } = msg else {
            return Err(self.out_of_phase());
        };
        if self.phase != EdgePhase::AwaitM4 {
            return Err(self.out_of_phase());
        }
        if *gw_id_hash != self.gw_id_hash {
            return Err(self.fail(ProtocolError::WrongGateway));
        }
        self.e_key = Key256::from(self.c_r);
        let expected = hmac_tag(&self.e_key, &[m_b, gw_id_hash.as_bytes(), self.r.as_bytes()]);
        if expected != *tag {
            return Err(self.fail(ProtocolError::TagMismatch));
        }
        let ack = 1u8;
        let c_i = CsiSample::from_bytes(xor_mask(m_b, &self.e_key, &self.r));
        self.sn_key = Key256::from(self.c_r).xor(&Key256::from(c_i));
        self.e_init = self.sn_key;
        let mut new_seed = [0u8; BLOCK_LEN];
        rng.fill_bytes(&mut new_seed);
        self.seed = Seed::new(new_seed);
        self.pending_seed = None;
        self.ctr_e = 1;
        self.a = None;
        let plain = M5Plain { c_i, new_seed, ack };
        let envelope = aead_seal(&self.sn_key, &plain.encode(), rng);
        self.phase = EdgePhase::AwaitM7;
        Ok(ProtocolMessage::M5 { envelope })
    }

    /// Choose this session's exponent `a` and emit M6.
    pub fn ca_start<R: RngCore + CryptoRng>(&mut self, rng: &mut R) -> Result<ProtocolMessage, ProtocolError> {
        if self.phase != EdgePhase::AwaitM7 || self.a.is_some() || self.sn_key.is_unset() {
            return Err(ProtocolError::OutOfPhase {
                phase: self.phase.name(),
            });
        }
        let a = self.config.exponent_bounds().sample(rng);
        self.a = Some(a);
        let m_c = xor_mask(&a.to_block(), &self.sn_key, &self.r);
        let plain = M6Plain {
            m_c,
            edge_id_hash: self.id.id_hash(),
        };
        Ok(ProtocolMessage::M6 {
            envelope: aead_seal(&self.sn_key, &plain.encode(), rng),
        })
    }

    /// Verify a CA challenge and answer with M8, or fall back to mutual auth on ack=0.
    pub fn on_m7<R: RngCore + CryptoRng>(
        &mut self,
        msg: &ProtocolMessage,
        rng: &mut R,
    ) -> Result<M7Outcome, ProtocolError> {
        let ProtocolMessage::M7 { envelope } = msg else {
            return Err(self.out_of_phase());
        };
        let Some(a) = self.a.filter(|_| self.phase == EdgePhase::AwaitM7) else {
            return Err(self.out_of_phase());
        };
        let plain = aead_open(&self.sn_key, envelope).map_err(|e| self.fail(e.into()))?;
        let m7 = M7Plain::decode(&plain).map_err(|e| self.fail(e.into()))?;
        if m7.ack == 0 {
            self.phase = EdgePhase::Expired;
            self.a = None;
            return Ok(M7Outcome::GoToMutualAuth);
        }
        if m7.a_echo != a {
            return Err(self.fail(ProtocolError::ExponentEchoMismatch));
        }
        if self.ctr_e.checked_add(1) != Some(m7.ctr_g) {
            return Err(self.fail(ProtocolError::CounterMismatch));
        }
        self.ctr_e += 1;
        let Some(b) = Exponent::from_block(&xor_mask(&m7.m_d, &self.sn_key, &self.r)) else {
            return Err(self.fail(WireError::BadPadding.into()));
        };
        let f_local = compute_f(m7.t, a, b, &self.config.exponent_bounds()).map_err(|e| self.fail(e.into()))?;
        if f_local != m7.f {
            return Err(self.fail(ProtocolError::FunctionMismatch));
        }
        let reply = M8Plain {
            f: f_local,
            ctr_e: self.ctr_e,
        };
        Ok(M7Outcome::Respond(ProtocolMessage::M8 {
            envelope: aead_seal(&self.sn_key, &reply.encode(), rng),
        }))
    }
}
