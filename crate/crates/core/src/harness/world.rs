//! Discrete-event simulation of one edge and its gateway.
//!
//! Every packet goes through the [`Channel`] and, unless an attacker sent it,
//! past a [`Tap`] that may forward, drop, replace or inject traffic. Delivery
//! has zero latency; events that share a timestamp run in scheduling order.
//! Packets addressed to the edge reach every listening edge device, which is
//! how a clone sharing the original's address overhears its traffic.
//!
//! Packets built from attacker bytes are *tainted*. A legitimate party that
//! accepts a tainted packet at an authenticating step marks its session as
//! *influenced*, and the mark follows that session's outgoing packets so
//! downstream failures can be attributed to the attack.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::transcript::{EventKind, Transcript};
use super::ScenarioError;
use crate::channel::{Channel, ChannelConfig, ChannelError, DeliveryEvent, EndpointId};
use crate::crypto::{CsiSample, Key256, Seed};
use crate::protocol::{
    CaStep, DeviceId, EdgePhase, EdgeState, FailurePoint, GatewayPhase, GatewayState, M7Outcome, MessageKind,
    Operation, PointXEntry, PointXOutcome, ProtocolError, ProtocolMessage, SessionConfig, WireError,
};

pub const EDGE: EndpointId = EndpointId(1);
pub const GATEWAY: EndpointId = EndpointId(2);
pub const ATTACKER: EndpointId = EndpointId(3);
pub const CLONE: EndpointId = EndpointId(4);

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub scenario_seed: u64,
    pub session: SessionConfig,
    pub channel: ChannelConfig,
    pub duration_ms: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Original,
    Clone,
}

impl NodeRole {
    fn actor(self) -> &'static str {
        match self {
            NodeRole::Original => "edge",
            NodeRole::Clone => "clone",
        }
    }

    fn phys(self) -> EndpointId {
        match self {
            NodeRole::Original => EDGE,
            NodeRole::Clone => CLONE,
        }
    }
}

/// A packet as the attacker sees it on the air.
#[derive(Clone, Debug)]
pub struct Observed {
    pub time: u64,
    pub from: EndpointId,
    pub to: EndpointId,
    pub kind: MessageKind,
    pub bytes: Vec<u8>,
    /// What the attacker's own radio measured for this packet.
    pub eve_csi: CsiSample,
    /// How many legitimate packets of this kind preceded this one.
    pub index: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TapAction {
    Forward,
    Drop,
    /// Drop the original and retransmit these bytes under the same source address.
    Replace(Vec<u8>),
    /// Deliver normally but keep the given edge device from hearing it.
    Exclude(NodeRole),
}

#[derive(Clone, Debug)]
enum Command {
    Inject {
        at: u64,
        from: EndpointId,
        to: EndpointId,
        bytes: Vec<u8>,
    },
    Timer {
        at: u64,
        token: u64,
    },
    SnapshotClone {
        activate_at: u64,
    },
    SetOnline {
        at: u64,
        online: bool,
    },
    EnrollDuplicate,
}

/// What an attacker may do from inside a tap callback.
pub struct TapCtx {
    now: u64,
    edge_id_hash: Key256,
    gw_id_hash: Key256,
    config: SessionConfig,
    commands: Vec<Command>,
}

impl TapCtx {
    pub fn now(&self) -> u64 {
        self.now
    }

    /// Public identity hashes (they travel in clear in M1 and M2).
    pub fn edge_id_hash(&self) -> Key256 {
        self.edge_id_hash
    }

    pub fn gw_id_hash(&self) -> Key256 {
        self.gw_id_hash
    }

    pub fn session_config(&self) -> SessionConfig {
        self.config
    }

    /// Transmit `bytes` from the attacker's radio claiming source address `from`.
    pub fn inject(&mut self, at: u64, from: EndpointId, to: EndpointId, bytes: Vec<u8>) {
        self.commands.push(Command::Inject { at, from, to, bytes });
    }

    pub fn timer(&mut self, at: u64, token: u64) {
        self.commands.push(Command::Timer { at, token });
    }

    /// Copy the original edge's full state now; the copy goes live at `activate_at`.
    pub fn snapshot_clone(&mut self, activate_at: u64) {
        self.commands.push(Command::SnapshotClone { activate_at });
    }

    /// Take the original edge off the air, or bring it back (it then re-authenticates).
    pub fn set_original_online(&mut self, at: u64, online: bool) {
        self.commands.push(Command::SetOnline { at, online });
    }

    /// Ask the gateway to enroll the already-registered edge identity again.
    pub fn enroll_duplicate(&mut self) {
        self.commands.push(Command::EnrollDuplicate);
    }
}

pub trait Tap {
    fn on_start(&mut self, _ctx: &mut TapCtx) {}

    /// Called for every packet a legitimate device puts on the air.
    fn on_packet(&mut self, _pkt: &Observed, _ctx: &mut TapCtx) -> TapAction {
        TapAction::Forward
    }

    /// Called for packets addressed to the attacker.
    fn on_inbox(&mut self, _pkt: &Observed, _ctx: &mut TapCtx) {}

    fn on_timer(&mut self, _token: u64, _ctx: &mut TapCtx) {}
}

/// No attacker.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoTap;

impl Tap for NoTap {}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub handshake_attempts: u64,
    pub auth_successes: u64,
    pub handshake_aborts: u64,
    pub expiries: u64,
    pub expiry_reauths: u64,
    pub ca_rounds: u64,
    pub packets_sent: u64,
    pub packets_dropped: u64,
}

/// Keys both sides hold right after a mutual authentication by the original edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SessionRecord {
    pub t_m: u64,
    pub edge_sn_key: Key256,
    pub gw_sn_key: Key256,
    pub edge_e_init: Key256,
    pub gw_e_init: Key256,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ExpiryRecord {
    pub t_m: u64,
    pub t_ack: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FailureRecord {
    pub t: u64,
    pub actor: &'static str,
    pub point: FailurePoint,
    /// False for failures inside attacker-controlled devices.
    pub legit: bool,
    pub attack_related: bool,
    /// The rejected input came straight from the attacker.
    pub rejected_tainted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Acceptance {
    pub t: u64,
    pub actor: &'static str,
    #[serde(serialize_with = "ser_op")]
    pub op: Operation,
}

fn ser_op<S: serde::Serializer>(op: &Operation, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(op.name())
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub transcript: Transcript,
    pub stats: Stats,
    pub sessions: Vec<SessionRecord>,
    pub expiries: Vec<ExpiryRecord>,
    pub failures: Vec<FailureRecord>,
    /// Tainted packets a legitimate party processed without error.
    pub accepted_tainted: Vec<Acceptance>,
    pub clone_activated_at: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum AuthReason {
    Start,
    Expiry,
    Recovery,
}

#[derive(Clone, Debug)]
struct EdgeNode {
    state: EdgeState,
    online: bool,
    active: bool,
    progress: u64,
    session_epoch: u64,
    influenced: bool,
    handshake_open: bool,
    reason: AuthReason,
    begin_pending: bool,
    /// Remaining re-authentication attempts; unlimited for the original.
    reauth_budget: Option<u32>,
}

#[derive(Clone, Copy, Debug)]
struct GwMeta {
    progress: u64,
    peer: EndpointId,
    origin_tainted: bool,
    origin_node: Option<NodeRole>,
    influenced: bool,
}

impl Default for GwMeta {
    fn default() -> Self {
        Self {
            progress: 0,
            peer: EDGE,
            origin_tainted: false,
            origin_node: None,
            influenced: false,
        }
    }
}

#[derive(Clone, Debug)]
struct Packet {
    phys: EndpointId,
    from: EndpointId,
    to: EndpointId,
    bytes: Vec<u8>,
    tainted: bool,
    influenced: bool,
    origin: Option<NodeRole>,
    exclude: Option<NodeRole>,
}

#[derive(Clone, Debug)]
enum Event {
    Deliver {
        pkt: Packet,
        delivery: Result<DeliveryEvent, WireError>,
    },
    Inject(Packet),
    BeginAuth(NodeRole),
    CaStart {
        node: NodeRole,
        epoch: u64,
    },
    EdgeWatchdog {
        node: NodeRole,
        progress: u64,
    },
    GatewayTick {
        edge: Key256,
        progress: u64,
    },
    GatewayWatchdog {
        edge: Key256,
        progress: u64,
    },
    TapTimer(u64),
    ActivateClone,
    SetOnline(bool),
    EnrollDuplicate,
}

pub struct World<T: Tap = NoTap> {
    cfg: WorldConfig,
    now: u64,
    next_seq: u64,
    queue: BTreeMap<(u64, u64), Event>,
    channel: Channel,
    rng: ChaCha20Rng,
    edge_id: DeviceId,
    gateway: GatewayState,
    nodes: BTreeMap<NodeRole, EdgeNode>,
    bind: BTreeMap<EndpointId, Key256>,
    gw_meta: BTreeMap<Key256, GwMeta>,
    registry_influenced: bool,
    seen: [u64; 8],
    tap: T,
    transcript: Transcript,
    stats: Stats,
    sessions: Vec<SessionRecord>,
    expiries: Vec<ExpiryRecord>,
    failures: Vec<FailureRecord>,
    accepted: Vec<Acceptance>,
    clone_activated_at: Option<u64>,
}

impl World<NoTap> {
    pub fn honest(cfg: WorldConfig) -> Result<Self, ScenarioError> {
        World::new(cfg, NoTap)
    }
}

impl<T: Tap> World<T> {
    pub fn new(cfg: WorldConfig, tap: T) -> Result<Self, ScenarioError> {
        cfg.session.validate()?;
        let channel = Channel::new(cfg.channel.clone())?;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.scenario_seed);
        let mut raw = [0u8; 16];
        rng.fill_bytes(&mut raw);
        let edge_id = DeviceId::new(raw.to_vec());
        rng.fill_bytes(&mut raw);
        let gw_id = DeviceId::new(raw.to_vec());
        let seed = Seed::random(&mut rng);
        let mut gateway = GatewayState::new(gw_id, cfg.session);
        let edge_state = gateway
            .enroll(&edge_id, seed)
            .expect("a fresh gateway accepts its first enrollment");
        let mut transcript = Transcript::new();
        transcript.push(
            0,
            "gateway",
            EventKind::State,
            format!("enrolled edge {}", &edge_id.id_hash().to_hex()[..8]),
            false,
        );
        let mut nodes = BTreeMap::new();
        nodes.insert(
            NodeRole::Original,
            EdgeNode {
                state: edge_state,
                online: true,
                active: true,
                progress: 0,
                session_epoch: 0,
                influenced: false,
                handshake_open: false,
                reason: AuthReason::Start,
                begin_pending: false,
                reauth_budget: None,
            },
        );
        let mut world = Self {
            cfg,
            now: 0,
            next_seq: 0,
            queue: BTreeMap::new(),
            channel,
            rng,
            edge_id,
            gateway,
            nodes,
            bind: BTreeMap::new(),
            gw_meta: BTreeMap::new(),
            registry_influenced: false,
            seen: [0; 8],
            tap,
            transcript,
            stats: Stats::default(),
            sessions: Vec::new(),
            expiries: Vec::new(),
            failures: Vec::new(),
            accepted: Vec::new(),
            clone_activated_at: None,
        };
        world.schedule(0, Event::BeginAuth(NodeRole::Original));
        Ok(world)
    }

    pub fn edge_id_hash(&self) -> Key256 {
        self.edge_id.id_hash()
    }

    pub fn gw_id_hash(&self) -> Key256 {
        self.gateway.id().id_hash()
    }

    pub fn run(mut self) -> (RunReport, T) {
        self.with_tap(|tap, ctx| tap.on_start(ctx));
        while let Some(entry) = self.queue.first_entry() {
            let (t, _) = *entry.key();
            if t >= self.cfg.duration_ms {
                break;
            }
            let ev = entry.remove();
            self.now = t;
            self.dispatch(ev);
        }
        self.finish()
    }

    fn finish(mut self) -> (RunReport, T) {
        self.now = self.now.max(self.cfg.duration_ms);
        let open: Vec<NodeRole> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.handshake_open)
            .map(|(r, _)| *r)
            .collect();
        for role in open {
            let op = match self.nodes[&role].state.phase() {
                EdgePhase::AwaitM2 => Operation::EdgeOnM2,
                EdgePhase::AwaitM4 => Operation::EdgeOnM4,
                _ => Operation::EdgeOnM7,
            };
            self.edge_fail(role, op, ProtocolError::Timeout, None);
            self.close_handshake(Some(role), false);
        }
        let report = RunReport {
            transcript: self.transcript,
            stats: self.stats,
            sessions: self.sessions,
            expiries: self.expiries,
            failures: self.failures,
            accepted_tainted: self.accepted,
            clone_activated_at: self.clone_activated_at,
        };
        (report, self.tap)
    }

    /// How long a party waits for the next expected message before giving up.
    fn response_timeout(&self) -> u64 {
        let i = self.cfg.session.ca_round_interval_ms;
        2 * i + i / 2
    }

    fn schedule(&mut self, t: u64, ev: Event) {
        self.queue.insert((t.max(self.now), self.next_seq), ev);
        self.next_seq += 1;
    }

    fn log(&mut self, actor: &'static str, kind: EventKind, summary: impl Into<String>, tainted: bool) {
        self.transcript.push(self.now, actor, kind, summary, tainted);
    }

    fn with_tap<R>(&mut self, f: impl FnOnce(&mut T, &mut TapCtx) -> R) -> R {
        let mut ctx = TapCtx {
            now: self.now,
            edge_id_hash: self.edge_id.id_hash(),
            gw_id_hash: self.gateway.id().id_hash(),
            config: self.cfg.session,
            commands: Vec::new(),
        };
        let out = f(&mut self.tap, &mut ctx);
        for cmd in ctx.commands {
            self.apply(cmd);
        }
        out
    }

    fn apply(&mut self, cmd: Command) {
        match cmd {
            Command::Inject { at, from, to, bytes } => self.schedule(
                at,
                Event::Inject(Packet {
                    phys: ATTACKER,
                    from,
                    to,
                    bytes,
                    tainted: true,
                    influenced: true,
                    origin: None,
                    exclude: None,
                }),
            ),
            Command::Timer { at, token } => self.schedule(at, Event::TapTimer(token)),
            Command::SnapshotClone { activate_at } => {
                let original = &self.nodes[&NodeRole::Original];
                let clone = EdgeNode {
                    state: original.state.clone(),
                    online: true,
                    active: false,
                    progress: 0,
                    session_epoch: 0,
                    influenced: false,
                    handshake_open: false,
                    reason: AuthReason::Recovery,
                    begin_pending: false,
                    reauth_budget: Some(1),
                };
                self.nodes.insert(NodeRole::Clone, clone);
                self.log("attacker", EventKind::State, "snapshot of edge state taken", true);
                self.schedule(activate_at, Event::ActivateClone);
            }
            Command::SetOnline { at, online } => self.schedule(at, Event::SetOnline(online)),
            Command::EnrollDuplicate => self.schedule(self.now, Event::EnrollDuplicate),
        }
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::Deliver { pkt, delivery } => self.deliver(pkt, delivery),
            Event::Inject(pkt) => {
                let summary = match ProtocolMessage::decode(&pkt.bytes) {
                    Ok(m) => m.summary(),
                    Err(_) => format!("{} undecodable bytes", pkt.bytes.len()),
                };
                self.log(
                    "attacker",
                    EventKind::Inject,
                    format!("{summary} as {} to {}", pkt.from, pkt.to),
                    true,
                );
                self.transmit(pkt);
            }
            Event::BeginAuth(role) => {
                let Some(node) = self.nodes.get_mut(&role) else { return };
                node.begin_pending = false;
                if !(node.online && node.active) {
                    return;
                }
                if matches!(
                    node.state.phase(),
                    EdgePhase::Init | EdgePhase::Expired | EdgePhase::Aborted
                ) {
                    self.begin_auth_now(role);
                }
            }
            Event::CaStart { node: role, epoch } => self.ca_start(role, epoch),
            Event::EdgeWatchdog { node: role, progress } => self.edge_watchdog(role, progress),
            Event::GatewayTick { edge, progress } => {
                let current = self.gw_meta.get(&edge).map(|m| m.progress);
                let ready = self
                    .gateway
                    .session(&edge)
                    .is_some_and(|s| s.phase() == GatewayPhase::InSession && s.step() == CaStep::Ready);
                if current == Some(progress) && ready {
                    self.gw_point_x(edge, None);
                }
            }
            Event::GatewayWatchdog { edge, progress } => self.gw_watchdog(edge, progress),
            Event::TapTimer(token) => self.with_tap(|tap, ctx| tap.on_timer(token, ctx)),
            Event::ActivateClone => self.activate_clone(),
            Event::SetOnline(online) => self.set_online(online),
            Event::EnrollDuplicate => {
                let seed = Seed::random(&mut self.rng);
                let edge_id = self.edge_id.clone();
                match self.gateway.enroll(&edge_id, seed) {
                    Ok(_) => {
                        self.accepted.push(Acceptance {
                            t: self.now,
                            actor: "gateway",
                            op: Operation::Enroll,
                        });
                        self.log("gateway", EventKind::State, "duplicate enrollment accepted", true);
                    }
                    Err(e) => {
                        self.record_failure("gateway", Operation::Enroll, e, true, true, true);
                    }
                }
            }
        }
    }

    // ---- transmission ----

    fn transmit(&mut self, mut pkt: Packet) {
        self.stats.packets_sent += 1;
        let delivery = match ProtocolMessage::decode(&pkt.bytes) {
            Ok(msg) => match self.channel.transmit(pkt.phys, pkt.to, msg, self.now) {
                Ok(ev) => Ok(ev),
                Err(ChannelError::Dropped { sequence, .. }) => {
                    self.stats.packets_dropped += 1;
                    self.log(
                        "channel",
                        EventKind::Drop,
                        format!("packet {sequence} from {} to {} lost", pkt.phys, pkt.to),
                        pkt.tainted,
                    );
                    return;
                }
                Err(e) => unreachable!("transmit only drops: {e}"),
            },
            Err(e) => Err(e),
        };
        // Packets addressed to the attacker reach it through `on_inbox` instead.
        if !pkt.tainted && pkt.to != ATTACKER {
            if let Ok(ev) = &delivery {
                let kind = ev.message.kind();
                let slot = usize::from(kind.tag() - 1);
                let obs = Observed {
                    time: self.now,
                    from: pkt.from,
                    to: pkt.to,
                    kind,
                    bytes: pkt.bytes.clone(),
                    eve_csi: self.channel.observe_as_eavesdropper(ev, ATTACKER),
                    index: self.seen[slot],
                };
                self.seen[slot] += 1;
                match self.with_tap(|tap, ctx| tap.on_packet(&obs, ctx)) {
                    TapAction::Forward => {}
                    TapAction::Drop => {
                        self.log("attacker", EventKind::Intercept, format!("{kind} dropped"), true);
                        return;
                    }
                    TapAction::Replace(bytes) => {
                        self.log("attacker", EventKind::Intercept, format!("{kind} replaced"), true);
                        let forged = Packet {
                            phys: ATTACKER,
                            bytes,
                            tainted: true,
                            influenced: true,
                            origin: None,
                            exclude: None,
                            ..pkt
                        };
                        self.transmit(forged);
                        return;
                    }
                    TapAction::Exclude(role) => pkt.exclude = Some(role),
                }
            }
        }
        self.schedule(self.now, Event::Deliver { pkt, delivery });
    }

    fn deliver(&mut self, pkt: Packet, delivery: Result<DeliveryEvent, WireError>) {
        match pkt.to {
            GATEWAY => self.gateway_recv(pkt, delivery),
            ATTACKER => {
                if let Ok(ev) = delivery {
                    let obs = Observed {
                        time: self.now,
                        from: pkt.from,
                        to: pkt.to,
                        kind: ev.message.kind(),
                        bytes: pkt.bytes,
                        eve_csi: ev.csi_at_receiver,
                        index: 0,
                    };
                    self.with_tap(|tap, ctx| tap.on_inbox(&obs, ctx));
                }
            }
            EDGE => {
                for role in [NodeRole::Original, NodeRole::Clone] {
                    let listening = self.nodes.get(&role).is_some_and(|n| n.online && n.active);
                    if listening && pkt.exclude != Some(role) {
                        self.edge_recv(role, &pkt, &delivery);
                    }
                }
            }
            _ => {}
        }
    }

    // ---- failure bookkeeping ----

    fn record_failure(
        &mut self,
        actor: &'static str,
        op: Operation,
        error: ProtocolError,
        legit: bool,
        attack_related: bool,
        tainted: bool,
    ) {
        let point = FailurePoint::new(op, error);
        self.transcript.abort(self.now, actor, point.clone(), tainted);
        self.failures.push(FailureRecord {
            t: self.now,
            actor,
            point,
            legit,
            attack_related,
            rejected_tainted: tainted,
        });
    }

    fn gw_fail(&mut self, edge: Option<Key256>, op: Operation, error: ProtocolError, pkt: Option<&Packet>) {
        let meta = edge.and_then(|e| self.gw_meta.get(&e)).copied().unwrap_or_default();
        let from_attack = pkt.is_some_and(|p| p.tainted || p.influenced);
        let attack_related = from_attack
            || meta.influenced
            || (error == ProtocolError::Timeout && meta.origin_tainted)
            || self.registry_influenced;
        let tainted = pkt.is_some_and(|p| p.tainted);
        self.record_failure("gateway", op, error, true, attack_related, tainted);
        if let Some(e) = edge {
            if let Some(m) = self.gw_meta.get_mut(&e) {
                m.progress += 1;
            }
        }
    }

    fn edge_fail(&mut self, role: NodeRole, op: Operation, error: ProtocolError, pkt: Option<&Packet>) {
        let node = &self.nodes[&role];
        let attack_related = node.influenced || pkt.is_some_and(|p| p.tainted || p.influenced);
        let tainted = pkt.is_some_and(|p| p.tainted);
        let legit = role == NodeRole::Original;
        self.record_failure(role.actor(), op, error, legit, attack_related, tainted);
    }

    fn close_handshake(&mut self, role: Option<NodeRole>, success: bool) {
        let Some(node) = role.and_then(|r| self.nodes.get_mut(&r)) else {
            return;
        };
        if !node.handshake_open {
            return;
        }
        node.handshake_open = false;
        if success {
            self.stats.auth_successes += 1;
            if role == Some(NodeRole::Original) && node.reason == AuthReason::Expiry {
                self.stats.expiry_reauths += 1;
            }
        } else {
            self.stats.handshake_aborts += 1;
        }
    }

    fn note_accept(&mut self, actor: &'static str, op: Operation, pkt: &Packet) {
        if pkt.tainted {
            self.accepted.push(Acceptance { t: self.now, actor, op });
        }
    }

    // ---- edge side ----

    fn arm_edge(&mut self, role: NodeRole) {
        let node = self.nodes.get_mut(&role).expect("node exists");
        node.progress += 1;
        let progress = node.progress;
        let at = self.now + self.response_timeout();
        self.schedule(at, Event::EdgeWatchdog { node: role, progress });
    }

    fn edge_send(&mut self, role: NodeRole, msg: &ProtocolMessage) {
        let node = &self.nodes[&role];
        let tainted = role == NodeRole::Clone;
        let pkt = Packet {
            phys: role.phys(),
            from: EDGE,
            to: GATEWAY,
            bytes: msg.encode(),
            tainted,
            influenced: tainted || node.influenced,
            origin: Some(role),
            exclude: None,
        };
        self.log(role.actor(), EventKind::Send, msg.summary(), tainted);
        self.transmit(pkt);
    }

    fn restart(&mut self, role: NodeRole) {
        let i = self.cfg.session.ca_round_interval_ms;
        // A clone runs attacker firmware; it retries off the gateway's tick grid.
        let delay = if role == NodeRole::Clone { i / 2 } else { i };
        let node = self.nodes.get_mut(&role).expect("node exists");
        if node.begin_pending {
            return;
        }
        match node.reauth_budget.as_mut() {
            Some(0) => {
                node.active = false;
                self.log(
                    role.actor(),
                    EventKind::State,
                    "out of re-authentication attempts; going quiet",
                    role == NodeRole::Clone,
                );
                return;
            }
            Some(b) => *b -= 1,
            None => {}
        }
        node.begin_pending = true;
        node.reason = AuthReason::Recovery;
        self.schedule(self.now + delay, Event::BeginAuth(role));
    }

    fn begin_auth_now(&mut self, role: NodeRole) {
        self.close_handshake(Some(role), false);
        let node = self.nodes.get_mut(&role).expect("node exists");
        if !matches!(
            node.state.phase(),
            EdgePhase::Init | EdgePhase::Expired | EdgePhase::Aborted
        ) {
            node.state.abort();
        }
        let m1 = node.state.begin_auth().expect("edge was reset before beginning");
        node.handshake_open = true;
        node.influenced = false;
        self.stats.handshake_attempts += 1;
        self.arm_edge(role);
        self.edge_send(role, &m1);
    }

    fn edge_recv(&mut self, role: NodeRole, pkt: &Packet, delivery: &Result<DeliveryEvent, WireError>) {
        let actor = role.actor();
        let ev = match delivery {
            Ok(ev) => ev,
            Err(e) => {
                self.log(
                    actor,
                    EventKind::Recv,
                    format!("{} undecodable bytes", pkt.bytes.len()),
                    pkt.tainted,
                );
                self.nodes.get_mut(&role).expect("node exists").state.abort();
                self.edge_fail(role, Operation::Decode, ProtocolError::Malformed(e.clone()), Some(pkt));
                self.close_handshake(Some(role), false);
                self.restart(role);
                return;
            }
        };
        let csi = if role == NodeRole::Original {
            ev.csi_at_receiver
        } else {
            self.channel.observe_as_eavesdropper(ev, CLONE)
        };
        self.log(actor, EventKind::Recv, ev.message.summary(), pkt.tainted);

        let node = self.nodes.get_mut(&role).expect("node exists");
        let msg = &ev.message;
        let result = match msg {
            ProtocolMessage::M2 { .. } => node
                .state
                .on_m2(msg, csi)
                .map(|m| (Operation::EdgeOnM2, Some(m)))
                .map_err(|e| (Operation::EdgeOnM2, e)),
            ProtocolMessage::M4 { .. } => node
                .state
                .on_m4(msg, &mut self.rng)
                .map(|m| (Operation::EdgeOnM4, Some(m)))
                .map_err(|e| (Operation::EdgeOnM4, e)),
            ProtocolMessage::M7 { .. } => match node.state.on_m7(msg, &mut self.rng) {
                Ok(M7Outcome::Respond(m8)) => Ok((Operation::EdgeOnM7, Some(m8))),
                Ok(M7Outcome::GoToMutualAuth) => Ok((Operation::EdgeOnM7, None)),
                Err(e) => Err((Operation::EdgeOnM7, e)),
            },
            _ => {
                let phase = node.state.phase().name();
                node.state.abort();
                Err((Operation::Decode, ProtocolError::OutOfPhase { phase }))
            }
        };

        match result {
            Ok((op, reply)) => {
                self.note_accept(actor, op, pkt);
                let node = self.nodes.get_mut(&role).expect("node exists");
                if pkt.influenced || (pkt.tainted && op.completes_phase()) {
                    node.influenced = true;
                }
                match (op, reply) {
                    (Operation::EdgeOnM4, Some(m5)) => {
                        node.session_epoch += 1;
                        let epoch = node.session_epoch;
                        let at = self.now + self.cfg.session.ca_round_interval_ms;
                        self.schedule(at, Event::CaStart { node: role, epoch });
                        self.arm_edge(role);
                        self.edge_send(role, &m5);
                    }
                    (_, Some(reply)) => {
                        self.arm_edge(role);
                        self.edge_send(role, &reply);
                    }
                    (_, None) => {
                        self.log(
                            actor,
                            EventKind::Expiry,
                            "ack=0 received; re-running mutual authentication",
                            pkt.tainted,
                        );
                        let node = self.nodes.get_mut(&role).expect("node exists");
                        node.reason = AuthReason::Expiry;
                        node.begin_pending = false;
                        self.begin_auth_now(role);
                    }
                }
            }
            Err((op, e)) => {
                self.edge_fail(role, op, e, Some(pkt));
                self.close_handshake(Some(role), false);
                self.restart(role);
            }
        }
    }

    fn ca_start(&mut self, role: NodeRole, epoch: u64) {
        let Some(node) = self.nodes.get_mut(&role) else { return };
        if !(node.online && node.active) || node.session_epoch != epoch {
            return;
        }
        if node.state.phase() != EdgePhase::AwaitM7 || node.state.exponent().is_some() {
            return;
        }
        match node.state.ca_start(&mut self.rng) {
            Ok(m6) => {
                self.arm_edge(role);
                self.edge_send(role, &m6);
            }
            Err(e) => {
                self.edge_fail(role, Operation::EdgeCaStart, e, None);
                self.restart(role);
            }
        }
    }

    fn edge_watchdog(&mut self, role: NodeRole, progress: u64) {
        let Some(node) = self.nodes.get_mut(&role) else { return };
        if !(node.online && node.active) || node.progress != progress {
            return;
        }
        let op = match node.state.phase() {
            EdgePhase::AwaitM2 => Operation::EdgeOnM2,
            EdgePhase::AwaitM4 => Operation::EdgeOnM4,
            EdgePhase::AwaitM7 => Operation::EdgeOnM7,
            _ => return,
        };
        node.state.abort();
        self.edge_fail(role, op, ProtocolError::Timeout, None);
        self.close_handshake(Some(role), false);
        self.restart(role);
    }

    fn activate_clone(&mut self) {
        let Some(node) = self.nodes.get_mut(&NodeRole::Clone) else {
            return;
        };
        node.active = true;
        self.clone_activated_at = Some(self.now);
        self.log("clone", EventKind::State, "clone activated", true);
        let node = &self.nodes[&NodeRole::Clone];
        match (node.state.phase(), node.state.exponent()) {
            (EdgePhase::AwaitM7, Some(_)) => self.arm_edge(NodeRole::Clone),
            (EdgePhase::AwaitM7, None) => {
                let node = self.nodes.get_mut(&NodeRole::Clone).expect("clone exists");
                node.session_epoch += 1;
                let epoch = node.session_epoch;
                self.ca_start(NodeRole::Clone, epoch);
            }
            _ => self.begin_auth_now(NodeRole::Clone),
        }
    }

    fn set_online(&mut self, online: bool) {
        let node = self.nodes.get_mut(&NodeRole::Original).expect("original exists");
        node.online = online;
        if !online {
            self.log("edge", EventKind::State, "went offline", false);
            return;
        }
        node.reason = AuthReason::Recovery;
        node.begin_pending = false;
        self.log("edge", EventKind::State, "back online", false);
        self.begin_auth_now(NodeRole::Original);
    }

    // ---- gateway side ----

    fn arm_gw(&mut self, edge: Key256) {
        let meta = self.gw_meta.entry(edge).or_default();
        meta.progress += 1;
        let progress = meta.progress;
        let at = self.now + self.response_timeout();
        self.schedule(at, Event::GatewayWatchdog { edge, progress });
    }

    fn gw_send(&mut self, edge: Key256, to: EndpointId, msg: &ProtocolMessage) {
        let influenced = self.gw_meta.get(&edge).is_some_and(|m| m.influenced);
        let pkt = Packet {
            phys: GATEWAY,
            from: GATEWAY,
            to,
            bytes: msg.encode(),
            tainted: false,
            influenced,
            origin: None,
            exclude: None,
        };
        self.log("gateway", EventKind::Send, msg.summary(), false);
        self.transmit(pkt);
    }

    /// Record a tainted or influenced packet that the gateway accepted.
    fn gw_accept(&mut self, edge: Key256, op: Operation, pkt: &Packet) {
        self.note_accept("gateway", op, pkt);
        if pkt.influenced || (pkt.tainted && op.completes_phase()) {
            self.gw_meta.entry(edge).or_default().influenced = true;
        }
    }

    fn gateway_recv(&mut self, pkt: Packet, delivery: Result<DeliveryEvent, WireError>) {
        let ev = match delivery {
            Ok(ev) => ev,
            Err(e) => {
                self.log(
                    "gateway",
                    EventKind::Recv,
                    format!("{} undecodable bytes", pkt.bytes.len()),
                    pkt.tainted,
                );
                let edge = self.bind.get(&pkt.from).copied();
                if let Some(edge) = edge {
                    self.gateway.abort_session(&edge);
                }
                self.gw_fail(edge, Operation::Decode, ProtocolError::Malformed(e), Some(&pkt));
                return;
            }
        };
        self.log("gateway", EventKind::Recv, ev.message.summary(), pkt.tainted);
        let msg = &ev.message;
        match msg {
            ProtocolMessage::M1 { edge_id_hash } => self.gw_on_m1(*edge_id_hash, &pkt, msg, ev.csi_at_receiver),
            ProtocolMessage::M3 { edge_id_hash, .. } => {
                let edge = *edge_id_hash;
                match self.gateway.on_m3(msg) {
                    Ok(m4) => {
                        self.gw_accept(edge, Operation::GwOnM3, &pkt);
                        self.arm_gw(edge);
                        self.gw_send(edge, pkt.from, &m4);
                    }
                    Err(e) => {
                        self.gw_fail(Some(edge), Operation::GwOnM3, e, Some(&pkt));
                        self.close_handshake(pkt.origin, false);
                    }
                }
            }
            ProtocolMessage::M5 { .. } => {
                let Some(edge) = self.bind.get(&pkt.from).copied() else {
                    self.gw_fail(None, Operation::GwOnM5, ProtocolError::UnknownEdge, Some(&pkt));
                    return;
                };
                match self.gateway.on_m5(&edge, msg, self.now) {
                    Ok(ok) => {
                        self.gw_accept(edge, Operation::GwOnM5, &pkt);
                        self.registry_influenced = self.gw_meta.get(&edge).is_some_and(|m| m.influenced);
                        self.log(
                            "gateway",
                            EventKind::AuthSuccess,
                            format!("t_m={} T={}", ok.t_m, ok.session_duration_ms),
                            pkt.tainted,
                        );
                        self.close_handshake(pkt.origin, true);
                        if pkt.origin == Some(NodeRole::Original) {
                            self.record_session(edge);
                        }
                        self.arm_gw(edge);
                    }
                    Err(e) => {
                        self.gw_fail(Some(edge), Operation::GwOnM5, e, Some(&pkt));
                        self.close_handshake(pkt.origin, false);
                    }
                }
            }
            ProtocolMessage::M6 { .. } => {
                let Some(edge) = self.bind.get(&pkt.from).copied() else {
                    self.gw_fail(None, Operation::GwPointX, ProtocolError::UnknownEdge, Some(&pkt));
                    return;
                };
                self.gw_point_x(edge, Some((msg, &pkt)));
            }
            ProtocolMessage::M8 { .. } => {
                let Some(edge) = self.bind.get(&pkt.from).copied() else {
                    self.gw_fail(None, Operation::GwOnM8, ProtocolError::UnknownEdge, Some(&pkt));
                    return;
                };
                match self.gateway.on_m8(&edge, msg) {
                    Ok(done) => {
                        self.gw_accept(edge, Operation::GwOnM8, &pkt);
                        self.stats.ca_rounds += 1;
                        self.log(
                            "gateway",
                            EventKind::RoundComplete,
                            format!("ctr={}", done.ctr),
                            pkt.tainted,
                        );
                        let meta = self.gw_meta.entry(edge).or_default();
                        meta.progress += 1;
                        let progress = meta.progress;
                        let at = self.now + self.cfg.session.ca_round_interval_ms;
                        self.schedule(at, Event::GatewayTick { edge, progress });
                    }
                    Err(e) => self.gw_fail(Some(edge), Operation::GwOnM8, e, Some(&pkt)),
                }
            }
            ProtocolMessage::M2 { .. } | ProtocolMessage::M4 { .. } | ProtocolMessage::M7 { .. } => {
                let edge = self.bind.get(&pkt.from).copied();
                let phase = edge.map_or(GatewayPhase::Idle, |e| self.gateway.phase(&e)).name();
                if let Some(e) = edge {
                    self.gateway.abort_session(&e);
                }
                self.gw_fail(edge, Operation::Decode, ProtocolError::OutOfPhase { phase }, Some(&pkt));
            }
        }
    }

    fn gw_on_m1(&mut self, edge: Key256, pkt: &Packet, msg: &ProtocolMessage, csi: CsiSample) {
        if self.gateway.registry().contains(&edge) {
            // A new hello replaces whatever session this identity had.
            match self.gateway.session(&edge).map(|s| s.phase()) {
                Some(GatewayPhase::AwaitM3) => {
                    self.gw_fail(Some(edge), Operation::GwOnM3, ProtocolError::Timeout, None)
                }
                Some(GatewayPhase::AwaitM5) => {
                    self.gw_fail(Some(edge), Operation::GwOnM5, ProtocolError::Timeout, None)
                }
                Some(GatewayPhase::InSession) => self.log(
                    "gateway",
                    EventKind::State,
                    "session superseded by a new M1",
                    pkt.tainted,
                ),
                _ => {}
            }
        }
        match self.gateway.on_m1(msg, csi) {
            Ok(m2) => {
                self.bind.insert(pkt.from, edge);
                let meta = self.gw_meta.entry(edge).or_default();
                meta.peer = pkt.from;
                meta.origin_tainted = pkt.tainted;
                meta.origin_node = pkt.origin;
                meta.influenced = false;
                self.note_accept("gateway", Operation::GwOnM1, pkt);
                self.arm_gw(edge);
                self.gw_send(edge, pkt.from, &m2);
            }
            Err(e) => self.gw_fail(Some(edge), Operation::GwOnM1, e, Some(pkt)),
        }
    }

    fn gw_point_x(&mut self, edge: Key256, m6: Option<(&ProtocolMessage, &Packet)>) {
        let t_m = self.gateway.session(&edge).map_or(0, |s| s.t_m());
        let entry = match m6 {
            Some((msg, _)) => PointXEntry::M6(msg),
            None => PointXEntry::Loop,
        };
        let outcome = self.gateway.point_x(&edge, entry, self.now, &mut self.rng);
        let pkt = m6.map(|(_, p)| p);
        let peer = self.gw_meta.get(&edge).map_or(EDGE, |m| m.peer);
        match outcome {
            Ok(PointXOutcome::Round(m7)) => {
                if let Some(p) = pkt {
                    self.gw_accept(edge, Operation::GwPointX, p);
                }
                self.arm_gw(edge);
                self.gw_send(edge, peer, &m7);
            }
            Ok(PointXOutcome::Expired(m7)) => {
                if let Some(p) = pkt {
                    self.gw_accept(edge, Operation::GwPointX, p);
                }
                self.stats.expiries += 1;
                self.expiries.push(ExpiryRecord { t_m, t_ack: self.now });
                self.log(
                    "gateway",
                    EventKind::Expiry,
                    format!("session from t_m={t_m} expired; ack=0"),
                    false,
                );
                self.gw_meta.entry(edge).or_default().progress += 1;
                self.gw_send(edge, peer, &m7);
            }
            Err(e) => self.gw_fail(Some(edge), Operation::GwPointX, e, pkt),
        }
    }

    fn gw_watchdog(&mut self, edge: Key256, progress: u64) {
        let Some(meta) = self.gw_meta.get(&edge).copied() else {
            return;
        };
        if meta.progress != progress {
            return;
        }
        let Some(session) = self.gateway.session(&edge) else {
            return;
        };
        let op = match (session.phase(), session.step()) {
            (GatewayPhase::AwaitM3, _) => Operation::GwOnM3,
            (GatewayPhase::AwaitM5, _) => Operation::GwOnM5,
            (GatewayPhase::InSession, CaStep::AwaitM6) => Operation::GwPointX,
            (GatewayPhase::InSession, CaStep::AwaitM8) => Operation::GwOnM8,
            _ => return,
        };
        self.gateway.abort_session(&edge);
        self.gw_fail(Some(edge), op, ProtocolError::Timeout, None);
        if matches!(op, Operation::GwOnM3 | Operation::GwOnM5) {
            self.close_handshake(meta.origin_node, false);
        }
    }

    fn record_session(&mut self, edge: Key256) {
        let node = &self.nodes[&NodeRole::Original];
        let session = self.gateway.session(&edge).expect("session just authenticated");
        let entry = self.gateway.registry().get(&edge).expect("edge is registered");
        self.sessions.push(SessionRecord {
            t_m: session.t_m(),
            edge_sn_key: node.state.sn_key(),
            gw_sn_key: session.sn_key(),
            edge_e_init: node.state.e_init(),
            gw_e_init: entry.e_init,
        });
    }
}
