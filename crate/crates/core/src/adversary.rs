//! Attacker models.
//!
//! Each [`AttackCase`] is a concrete attack run inside a simulated world
//! through a [`Tap`]. Attackers know only what their radio position gives
//! them: the public identity hashes, recorded packets and their own CSI
//! readings. The cloner additionally receives a full copy of the edge's state.
//!
//! An attack succeeds when a legitimate party accepts attacker-built bytes
//! at a step that authenticates a protocol phase or a CA round.

use std::ops::Range;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{aead_open, aead_seal, hmac_tag, xor_mask, Key256, Rand256};
use crate::harness::transcript::{EventKind, Transcript};
use crate::harness::world::{
    Acceptance, FailureRecord, Observed, RunReport, Tap, TapAction, TapCtx, World, ATTACKER, EDGE, GATEWAY,
};
use crate::harness::{Scenario, ScenarioError};
use crate::protocol::wire::M6Plain;
use crate::protocol::{FailurePoint, MessageKind, Operation, ProtocolMessage, SessionConfig};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum AttackKind {
    Replayer,
    Impersonator,
    MitmMutator,
    Cloner,
    SybilForger,
    PassiveEavesdropper,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackCase {
    ReplayM1,
    ReplayM3,
    ReplayM5,
    ReplayM6,
    ReplayM7,
    ReplayM8,
    FakeEdge,
    FakeGateway,
    FakeEdgeCa,
    MitmM1,
    MitmM2,
    MitmM3,
    MitmM4,
    MitmM5,
    MitmM6,
    MitmM7,
    MitmM8,
    CloneAfterExpiry,
    CloneWithinTSilent,
    CloneInterleaved,
    CloneSilentPastExpiry,
    SybilStolenIdentity,
    SybilGatewayIdDisclosure,
    SybilDuplicateEnrollment,
    PassiveEavesdropper,
}

impl AttackCase {
    pub const ALL: [AttackCase; 25] = [
        AttackCase::ReplayM1,
        AttackCase::ReplayM3,
        AttackCase::ReplayM5,
        AttackCase::ReplayM6,
        AttackCase::ReplayM7,
        AttackCase::ReplayM8,
        AttackCase::FakeEdge,
        AttackCase::FakeGateway,
        AttackCase::FakeEdgeCa,
        AttackCase::MitmM1,
        AttackCase::MitmM2,
        AttackCase::MitmM3,
        AttackCase::MitmM4,
        AttackCase::MitmM5,
        AttackCase::MitmM6,
        AttackCase::MitmM7,
        AttackCase::MitmM8,
        AttackCase::CloneAfterExpiry,
        AttackCase::CloneWithinTSilent,
        AttackCase::CloneInterleaved,
        AttackCase::CloneSilentPastExpiry,
        AttackCase::SybilStolenIdentity,
        AttackCase::SybilGatewayIdDisclosure,
        AttackCase::SybilDuplicateEnrollment,
        AttackCase::PassiveEavesdropper,
    ];

    pub const REPLAYS: [AttackCase; 6] = [
        AttackCase::ReplayM1,
        AttackCase::ReplayM3,
        AttackCase::ReplayM5,
        AttackCase::ReplayM6,
        AttackCase::ReplayM7,
        AttackCase::ReplayM8,
    ];

    pub const MITM: [AttackCase; 8] = [
        AttackCase::MitmM1,
        AttackCase::MitmM2,
        AttackCase::MitmM3,
        AttackCase::MitmM4,
        AttackCase::MitmM5,
        AttackCase::MitmM6,
        AttackCase::MitmM7,
        AttackCase::MitmM8,
    ];

    pub fn name(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .expect("unit variants serialize as strings")
    }

    pub fn kind(self) -> AttackKind {
        use AttackCase::*;
        match self {
            ReplayM1 | ReplayM3 | ReplayM5 | ReplayM6 | ReplayM7 | ReplayM8 => AttackKind::Replayer,
            FakeEdge | FakeGateway | FakeEdgeCa => AttackKind::Impersonator,
            MitmM1 | MitmM2 | MitmM3 | MitmM4 | MitmM5 | MitmM6 | MitmM7 | MitmM8 => AttackKind::MitmMutator,
            CloneAfterExpiry | CloneWithinTSilent | CloneInterleaved | CloneSilentPastExpiry => AttackKind::Cloner,
            SybilStolenIdentity | SybilGatewayIdDisclosure | SybilDuplicateEnrollment => AttackKind::SybilForger,
            PassiveEavesdropper => AttackKind::PassiveEavesdropper,
        }
    }

    /// The message class a replay or MiTM case targets.
    pub fn message_kind(self) -> Option<MessageKind> {
        use AttackCase::*;
        Some(match self {
            ReplayM1 | MitmM1 => MessageKind::M1,
            MitmM2 => MessageKind::M2,
            ReplayM3 | MitmM3 => MessageKind::M3,
            MitmM4 => MessageKind::M4,
            ReplayM5 | MitmM5 => MessageKind::M5,
            ReplayM6 | MitmM6 => MessageKind::M6,
            ReplayM7 | MitmM7 => MessageKind::M7,
            ReplayM8 | MitmM8 => MessageKind::M8,
            _ => return None,
        })
    }

    /// Where a legitimate party is expected to stop the attack.
    pub fn predicted(self) -> Option<(Operation, &'static str)> {
        use AttackCase::*;
        Some(match self {
            ReplayM1 => (Operation::GwOnM3, "Timeout"),
            ReplayM3 | FakeEdge | SybilStolenIdentity => (Operation::GwOnM3, "TagMismatch"),
            ReplayM5 => (Operation::GwOnM5, "AeadFailure"),
            ReplayM6 | FakeEdgeCa | PassiveEavesdropper => (Operation::GwPointX, "AeadFailure"),
            ReplayM7 | CloneInterleaved => (Operation::EdgeOnM7, "CounterMismatch"),
            ReplayM8 => (Operation::GwOnM8, "CounterMismatch"),
            FakeGateway | SybilGatewayIdDisclosure => (Operation::EdgeOnM4, "TagMismatch"),
            CloneAfterExpiry | CloneWithinTSilent | CloneSilentPastExpiry => (Operation::GwOnM3, "TagMismatch"),
            SybilDuplicateEnrollment => (Operation::Enroll, "DuplicateEnrollment"),
            MitmM1 | MitmM2 | MitmM3 | MitmM4 | MitmM5 | MitmM6 | MitmM7 | MitmM8 => return None,
        })
    }

    /// Cases where some attacker success is a known limitation, not a defect.
    pub fn residual_risk(self) -> bool {
        matches!(
            self,
            AttackCase::CloneWithinTSilent | AttackCase::CloneInterleaved | AttackCase::CloneSilentPastExpiry
        )
    }

    pub fn default_clone_delay(self, cfg: &SessionConfig) -> u64 {
        match self {
            AttackCase::CloneAfterExpiry => cfg.session_duration_ms + 2 * cfg.ca_round_interval_ms,
            _ => cfg.ca_round_interval_ms,
        }
    }

    /// Simulated time the attack needs to play out.
    pub fn min_duration(self, cfg: &SessionConfig, clone_delay: u64) -> u64 {
        use AttackCase::*;
        let t = cfg.session_duration_ms;
        let i = cfg.ca_round_interval_ms;
        match self {
            SybilDuplicateEnrollment => i,
            ReplayM7 | ReplayM8 | FakeGateway | FakeEdgeCa | PassiveEavesdropper => 3 * i,
            MitmM1 | MitmM2 | MitmM3 | MitmM4 | MitmM5 | MitmM6 | MitmM7 | MitmM8 => 3 * i,
            FakeEdge | SybilStolenIdentity => 4 * i,
            ReplayM1 => 5 * i,
            ReplayM3 | ReplayM5 | ReplayM6 | SybilGatewayIdDisclosure => t + 3 * i,
            CloneInterleaved => 6 * i + clone_delay,
            CloneWithinTSilent => t + 4 * i,
            CloneSilentPastExpiry => t + 7 * i,
            CloneAfterExpiry => clone_delay + 5 * i,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerModel {
    pub case: AttackCase,
    /// Cloner only: time from snapshot to clone activation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clone_delay_ms: Option<u64>,
    /// MiTM only: flip every bit position instead of 64 spread positions.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub full_sweep: bool,
}

impl AttackerModel {
    pub fn new(case: AttackCase) -> Self {
        Self {
            case,
            clone_delay_ms: None,
            full_sweep: false,
        }
    }

    pub fn kind(&self) -> AttackKind {
        self.case.kind()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Rejected,
    /// The attacker got through, as the protocol's analysis concedes it can.
    ResidualRisk,
    Unexpected,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttackVerdict {
    pub attack: AttackCase,
    pub kind: AttackKind,
    pub seed: u64,
    pub attack_succeeded: bool,
    pub outcome: Outcome,
    pub failure_point: Option<FailurePoint>,
    pub predicted_failure_point: Option<String>,
    pub prediction_held: bool,
    pub accepted_tainted: Vec<Acceptance>,
    /// Failures at legitimate parties attributable to the attack, in time order.
    pub failures: Vec<FailureRecord>,
    /// First and last time the attacker had a step accepted.
    pub window_ms: Option<[u64; 2]>,
    pub clone_activated_at: Option<u64>,
    pub trials: u64,
    pub accepted_trials: u64,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub transcript: Transcript,
}

impl AttackVerdict {
    fn from_report(case: AttackCase, seed: u64, report: &RunReport) -> Self {
        let succeeded = accepted_phase(report);
        let failures: Vec<FailureRecord> = report
            .failures
            .iter()
            .filter(|f| f.legit && f.attack_related)
            .cloned()
            .collect();
        // A shared radio address makes bystander aborts on stray messages common;
        // those are collateral, not the point where the attack was caught.
        let failure_point = failures
            .iter()
            .find(|f| f.point.error.code() != "OutOfPhase")
            .or(failures.first())
            .map(|f| f.point.clone());
        let wins: Vec<u64> = report
            .accepted_tainted
            .iter()
            .filter(|a| a.op.completes_phase())
            .map(|a| a.t)
            .collect();
        let window_ms = wins.first().map(|first| [*first, *wins.last().unwrap()]);
        let mut v = Self {
            attack: case,
            kind: case.kind(),
            seed,
            attack_succeeded: succeeded,
            outcome: Outcome::Rejected,
            failure_point,
            predicted_failure_point: case.predicted().map(|(op, code)| format!("{op}/{code}")),
            prediction_held: true,
            accepted_tainted: report.accepted_tainted.clone(),
            failures,
            window_ms,
            clone_activated_at: report.clone_activated_at,
            trials: 1,
            accepted_trials: u64::from(succeeded),
            notes: Vec::new(),
            transcript: report.transcript.clone(),
        };
        v.settle();
        v
    }

    fn settle(&mut self) {
        self.outcome = match (self.attack_succeeded, self.attack.residual_risk()) {
            (false, _) => Outcome::Rejected,
            (true, true) => Outcome::ResidualRisk,
            (true, false) => Outcome::Unexpected,
        };
        self.prediction_held = match self.attack.predicted() {
            Some((op, code)) => self.failure_point.as_ref().is_some_and(|fp| fp.matches(op, code)),
            None => true,
        };
    }

    pub fn unexpected(&self) -> bool {
        self.outcome == Outcome::Unexpected
    }

    /// One-line human summary.
    pub fn summary_line(&self) -> String {
        let fp = self
            .failure_point
            .as_ref()
            .map_or_else(|| "-".to_owned(), ToString::to_string);
        let outcome = match self.outcome {
            Outcome::Rejected => "rejected",
            Outcome::ResidualRisk => "known residual risk",
            Outcome::Unexpected => "UNEXPECTED SUCCESS",
        };
        let mut line = format!(
            "{:<28} seed={:<6} {:<20} failure_point={}",
            self.attack.name(),
            self.seed,
            outcome,
            fp
        );
        if self.trials > 1 {
            line.push_str(&format!(" trials={} accepted={}", self.trials, self.accepted_trials));
        }
        if let Some([a, b]) = self.window_ms {
            line.push_str(&format!(" window_ms={a}..{b}"));
        }
        if !self.prediction_held {
            line.push_str(&format!(
                " (predicted {})",
                self.predicted_failure_point.as_deref().unwrap_or("-")
            ));
        }
        line
    }

    fn append_to_transcript(&mut self) {
        let t = self.transcript.events().last().map_or(0, |e| e.t);
        let summary = serde_json::to_string(&self).expect("verdict serializes");
        self.transcript.push(t, "harness", EventKind::Verdict, summary, false);
    }
}

fn accepted_phase(report: &RunReport) -> bool {
    report
        .accepted_tainted
        .iter()
        .any(|a| a.op.completes_phase() || a.op == Operation::Enroll)
}

fn attack_rng(seed: u64, case: AttackCase) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed ^ 0xA77A_C4E5_0000_0000 ^ (case as u64) << 8)
}

fn random_block<R: RngCore>(rng: &mut R) -> [u8; 32] {
    let mut b = [0u8; 32];
    rng.fill_bytes(&mut b);
    b
}

/// Run `tap` against the scenario, stretching its duration to what the case needs.
fn run_world<T: Tap>(
    scenario: &Scenario,
    case: AttackCase,
    clone_delay: u64,
    tap: T,
) -> Result<(RunReport, T), ScenarioError> {
    let mut cfg = scenario.world_config();
    cfg.duration_ms = cfg
        .duration_ms
        .max(case.min_duration(&scenario.session_config, clone_delay));
    Ok(World::new(cfg, tap)?.run())
}

/// Execute one attack scenario. Returns the (first) run report and the verdict.
pub fn run_attack(scenario: &Scenario, model: &AttackerModel) -> Result<(RunReport, AttackVerdict), ScenarioError> {
    scenario.validate()?;
    let case = model.case;
    let seed = scenario.scenario_seed;
    let cfg = scenario.session_config;
    let clone_delay = model.clone_delay_ms.unwrap_or_else(|| case.default_clone_delay(&cfg));
    let mut rng = attack_rng(seed, case);

    use AttackCase::*;
    let (report, mut verdict) = match case {
        ReplayM1 | ReplayM3 | ReplayM5 | ReplayM6 | ReplayM7 | ReplayM8 => {
            let tap = ReplayTap::new(case.message_kind().expect("replay cases name a message"));
            let (report, _) = run_world(scenario, case, 0, tap)?;
            let v = AttackVerdict::from_report(case, seed, &report);
            (report, v)
        }
        FakeEdge | SybilStolenIdentity => {
            let tap = FakeEdgeTap {
                rng,
                reuse_recorded_m_a: case == SybilStolenIdentity,
                recorded_m_a: None,
            };
            let (report, _) = run_world(scenario, case, 0, tap)?;
            let mut v = AttackVerdict::from_report(case, seed, &report);
            if case == SybilStolenIdentity {
                v.notes
                    .push("stolen identity hash only reaches M2; session keys do not derive from identities".into());
            }
            (report, v)
        }
        FakeGateway | SybilGatewayIdDisclosure => {
            let learn = case == SybilGatewayIdDisclosure;
            let tap = FakeGatewayTap {
                rng,
                target_hello: u64::from(learn),
                learn_from_m2: learn,
                learned_gw: None,
                armed: false,
                done: false,
            };
            let (report, _) = run_world(scenario, case, 0, tap)?;
            let mut v = AttackVerdict::from_report(case, seed, &report);
            if learn {
                v.notes
                    .push("gateway identity learned from M2 is public; it gives no key material".into());
            }
            (report, v)
        }
        FakeEdgeCa => {
            let tap = ProbeTap {
                rng,
                key: ProbeKey::Guess,
                observed: Vec::new(),
            };
            let (report, _) = run_world(scenario, case, 0, tap)?;
            let v = AttackVerdict::from_report(case, seed, &report);
            (report, v)
        }
        MitmM1 | MitmM2 | MitmM3 | MitmM4 | MitmM5 | MitmM6 | MitmM7 | MitmM8 => {
            run_mitm(scenario, case, model.full_sweep, &mut rng)?
        }
        CloneAfterExpiry | CloneWithinTSilent | CloneInterleaved | CloneSilentPastExpiry => {
            let tap = CloneTap {
                case,
                delay: clone_delay,
                activate_at: None,
                last_m5: 0,
                interleave_step: 0,
            };
            let (report, _) = run_world(scenario, case, clone_delay, tap)?;
            let mut v = AttackVerdict::from_report(case, seed, &report);
            clone_notes(&mut v, &cfg, clone_delay);
            (report, v)
        }
        SybilDuplicateEnrollment => {
            let (report, _) = run_world(scenario, case, 0, DuplicateEnrollTap)?;
            let v = AttackVerdict::from_report(case, seed, &report);
            (report, v)
        }
        PassiveEavesdropper => {
            let tap = ProbeTap {
                rng,
                key: ProbeKey::FromCsi,
                observed: Vec::new(),
            };
            let (report, tap) = run_world(scenario, case, 0, tap)?;
            let mut v = AttackVerdict::from_report(case, seed, &report);
            let view = EavesdropperView::from_observed(&tap.observed);
            let true_key = report.sessions.first().map(|s| s.edge_sn_key);
            let recovered = true_key.is_some_and(|k| view.recovers(&k));
            v.notes.push(format!(
                "{} candidate keys from the eavesdropper's view; true SN_key {}",
                view.candidates.len(),
                if recovered { "RECOVERED" } else { "not among them" }
            ));
            if recovered {
                v.attack_succeeded = true;
                v.accepted_trials = 1;
                v.settle();
            }
            (report, v)
        }
    };
    verdict.append_to_transcript();
    let mut report = report;
    report.transcript = verdict.transcript.clone();
    Ok((report, verdict))
}

fn clone_notes(v: &mut AttackVerdict, cfg: &SessionConfig, delay: u64) {
    let t = cfg.session_duration_ms;
    match v.attack {
        AttackCase::CloneAfterExpiry => {
            v.notes
                .push(format!("clone_delay {delay} ms exceeds T = {t} ms; keys had rotated"));
        }
        AttackCase::CloneWithinTSilent => {
            v.notes
                .push("clone within T with the original silent passes CA rounds until the original re-keys".into());
        }
        AttackCase::CloneInterleaved => {
            if let (Some(act), Some(first)) = (
                v.clone_activated_at,
                v.failures
                    .iter()
                    .find(|f| f.point.matches(Operation::EdgeOnM7, "CounterMismatch")),
            ) {
                let rounds = (first.t - act).div_ceil(cfg.ca_round_interval_ms);
                v.notes.push(format!(
                    "counter divergence aborted the original {rounds} CA round(s) after clone activation"
                ));
            }
        }
        AttackCase::CloneSilentPastExpiry => {
            v.notes.push(
                "original stayed silent past expiry: the clone re-keyed first and the original is locked out".into(),
            );
        }
        _ => {}
    }
}

// ---- replay ----

struct ReplayTap {
    kind: MessageKind,
    recorded: Option<Vec<u8>>,
}

const REPLAY_M1_TIMER: u64 = 1;

impl ReplayTap {
    fn new(kind: MessageKind) -> Self {
        Self { kind, recorded: None }
    }
}

impl Tap for ReplayTap {
    fn on_start(&mut self, ctx: &mut TapCtx) {
        if self.kind == MessageKind::M1 {
            let i = ctx.session_config().ca_round_interval_ms;
            ctx.timer(i + i / 2, REPLAY_M1_TIMER);
        }
    }

    fn on_packet(&mut self, pkt: &Observed, _ctx: &mut TapCtx) -> TapAction {
        if pkt.kind != self.kind {
            return TapAction::Forward;
        }
        match (pkt.index, &self.recorded) {
            (0, _) => {
                self.recorded = Some(pkt.bytes.clone());
                TapAction::Forward
            }
            // M1 is replayed from the attacker's own address instead.
            (1, Some(old)) if self.kind != MessageKind::M1 => TapAction::Replace(old.clone()),
            _ => TapAction::Forward,
        }
    }

    fn on_timer(&mut self, token: u64, ctx: &mut TapCtx) {
        if token == REPLAY_M1_TIMER {
            if let Some(m1) = self.recorded.clone() {
                ctx.inject(ctx.now(), ATTACKER, GATEWAY, m1);
            }
        }
    }
}

// ---- impersonation ----

/// Plays the edge from the attacker's radio with guessed key material.
struct FakeEdgeTap {
    rng: ChaCha20Rng,
    reuse_recorded_m_a: bool,
    recorded_m_a: Option<[u8; 32]>,
}

const FAKE_EDGE_TIMER: u64 = 2;

impl Tap for FakeEdgeTap {
    fn on_start(&mut self, ctx: &mut TapCtx) {
        let i = ctx.session_config().ca_round_interval_ms;
        ctx.timer(i + i / 2, FAKE_EDGE_TIMER);
    }

    fn on_packet(&mut self, pkt: &Observed, _ctx: &mut TapCtx) -> TapAction {
        if let Ok(ProtocolMessage::M3 { m_a, .. }) = ProtocolMessage::decode(&pkt.bytes) {
            self.recorded_m_a.get_or_insert(m_a);
        }
        TapAction::Forward
    }

    fn on_timer(&mut self, _token: u64, ctx: &mut TapCtx) {
        let m1 = ProtocolMessage::M1 {
            edge_id_hash: ctx.edge_id_hash(),
        };
        ctx.inject(ctx.now(), ATTACKER, GATEWAY, m1.encode());
    }

    fn on_inbox(&mut self, pkt: &Observed, ctx: &mut TapCtx) {
        if pkt.kind != MessageKind::M2 {
            return;
        }
        let guess = Key256::from_bytes(random_block(&mut self.rng));
        let r = Rand256::from_bytes(random_block(&mut self.rng));
        let edge = ctx.edge_id_hash();
        let m_a = match (self.reuse_recorded_m_a, self.recorded_m_a) {
            (true, Some(m_a)) => m_a,
            _ => xor_mask(&random_block(&mut self.rng), &guess, &r),
        };
        let tag = hmac_tag(&guess, &[edge.as_bytes(), &m_a, r.as_bytes()]);
        let m3 = ProtocolMessage::M3 {
            edge_id_hash: edge,
            m_a,
            tag,
        };
        ctx.inject(ctx.now(), ATTACKER, GATEWAY, m3.encode());
    }
}

/// Intercepts one edge handshake and answers it as the gateway.
struct FakeGatewayTap {
    rng: ChaCha20Rng,
    /// Which of the edge's hellos to hijack.
    target_hello: u64,
    learn_from_m2: bool,
    learned_gw: Option<Key256>,
    armed: bool,
    done: bool,
}

impl Tap for FakeGatewayTap {
    fn on_packet(&mut self, pkt: &Observed, ctx: &mut TapCtx) -> TapAction {
        if self.done {
            return TapAction::Forward;
        }
        match pkt.kind {
            MessageKind::M2 if self.learn_from_m2 => {
                if let Ok(ProtocolMessage::M2 { gw_id_hash }) = ProtocolMessage::decode(&pkt.bytes) {
                    self.learned_gw.get_or_insert(gw_id_hash);
                }
                TapAction::Forward
            }
            MessageKind::M1 if pkt.index == self.target_hello => {
                let gw_id_hash = self.learned_gw.unwrap_or_else(|| ctx.gw_id_hash());
                ctx.inject(ctx.now(), GATEWAY, EDGE, ProtocolMessage::M2 { gw_id_hash }.encode());
                self.armed = true;
                TapAction::Drop
            }
            MessageKind::M3 if self.armed => {
                let gw_id_hash = self.learned_gw.unwrap_or_else(|| ctx.gw_id_hash());
                let guess = Key256::from_bytes(random_block(&mut self.rng));
                let r = random_block(&mut self.rng);
                let m_b = random_block(&mut self.rng);
                let tag = hmac_tag(&guess, &[&m_b, gw_id_hash.as_bytes(), &r]);
                let m4 = ProtocolMessage::M4 { gw_id_hash, tag, m_b };
                ctx.inject(ctx.now(), GATEWAY, EDGE, m4.encode());
                self.done = true;
                TapAction::Drop
            }
            _ => TapAction::Forward,
        }
    }
}

enum ProbeKey {
    /// A uniformly random key.
    Guess,
    /// The attacker's own CSI readings of M1 and M2, combined as the parties would.
    FromCsi,
}

/// Records all traffic and, once a session starts, injects an M6 under its best key.
struct ProbeTap {
    rng: ChaCha20Rng,
    key: ProbeKey,
    observed: Vec<Observed>,
}

const PROBE_TIMER: u64 = 3;

impl Tap for ProbeTap {
    fn on_packet(&mut self, pkt: &Observed, ctx: &mut TapCtx) -> TapAction {
        self.observed.push(pkt.clone());
        if pkt.kind == MessageKind::M5 && pkt.index == 0 {
            let i = ctx.session_config().ca_round_interval_ms;
            ctx.timer(ctx.now() + i / 2, PROBE_TIMER);
        }
        TapAction::Forward
    }

    fn on_timer(&mut self, _token: u64, ctx: &mut TapCtx) {
        let key = match self.key {
            ProbeKey::Guess => Key256::from_bytes(random_block(&mut self.rng)),
            ProbeKey::FromCsi => EavesdropperView::from_observed(&self.observed)
                .csi_guess
                .unwrap_or_else(|| Key256::from_bytes(random_block(&mut self.rng))),
        };
        let plain = M6Plain {
            m_c: random_block(&mut self.rng),
            edge_id_hash: ctx.edge_id_hash(),
        };
        let m6 = ProtocolMessage::M6 {
            envelope: aead_seal(&key, &plain.encode(), &mut self.rng),
        };
        ctx.inject(ctx.now(), EDGE, GATEWAY, m6.encode());
    }
}

/// Everything a passive listener can compute key guesses from.
pub struct EavesdropperView {
    pub candidates: Vec<Key256>,
    pub csi_guess: Option<Key256>,
    envelopes: Vec<Vec<u8>>,
}

impl EavesdropperView {
    pub fn from_observed(observed: &[Observed]) -> Self {
        let mut blocks: Vec<Key256> = Vec::new();
        let mut envelopes = Vec::new();
        let mut csi_m1 = None;
        let mut csi_m2 = None;
        for pkt in observed {
            blocks.push(Key256::from(pkt.eve_csi));
            match ProtocolMessage::decode(&pkt.bytes) {
                Ok(ProtocolMessage::M1 { edge_id_hash }) => {
                    csi_m1.get_or_insert(pkt.eve_csi);
                    blocks.push(edge_id_hash);
                }
                Ok(ProtocolMessage::M2 { gw_id_hash }) => {
                    csi_m2.get_or_insert(pkt.eve_csi);
                    blocks.push(gw_id_hash);
                }
                Ok(ProtocolMessage::M3 { edge_id_hash, m_a, tag }) => {
                    blocks.extend([edge_id_hash, Key256::from_bytes(m_a), tag]);
                }
                Ok(ProtocolMessage::M4 { gw_id_hash, tag, m_b }) => {
                    blocks.extend([gw_id_hash, tag, Key256::from_bytes(m_b)]);
                }
                Ok(other) => envelopes.extend(other.envelope().map(<[u8]>::to_vec)),
                Err(_) => {}
            }
        }
        blocks.sort();
        blocks.dedup();
        let mut candidates = blocks.clone();
        for (i, a) in blocks.iter().enumerate() {
            for b in &blocks[i + 1..] {
                candidates.push(a.xor(b));
            }
        }
        candidates.sort();
        candidates.dedup();
        let csi_guess = match (csi_m1, csi_m2) {
            (Some(ci), Some(cr)) => Some(Key256::from(ci).xor(&Key256::from(cr))),
            _ => None,
        };
        Self {
            candidates,
            csi_guess,
            envelopes,
        }
    }

    /// True if the view yields `key` or any key that opens an observed envelope.
    pub fn recovers(&self, key: &Key256) -> bool {
        self.candidates.binary_search(key).is_ok()
            || self
                .candidates
                .iter()
                .any(|k| self.envelopes.iter().any(|env| aead_open(k, env).is_ok()))
    }
}

// ---- MiTM ----

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mutation {
    BitFlip(usize),
    /// Replace field `n` of [`fields`] with random bytes.
    Field(usize),
}

/// Named byte ranges of an encoded message (the tag byte excluded).
pub fn fields(kind: MessageKind) -> Vec<(&'static str, Range<usize>)> {
    let len = kind.wire_len();
    match kind {
        MessageKind::M1 => vec![("edge_id_hash", 1..33)],
        MessageKind::M2 => vec![("gw_id_hash", 1..33)],
        MessageKind::M3 => vec![("edge_id_hash", 1..33), ("m_a", 33..65), ("tag", 65..97)],
        MessageKind::M4 => vec![("gw_id_hash", 1..33), ("tag", 33..65), ("m_b", 65..97)],
        _ => vec![
            ("nonce", 1..13),
            ("ciphertext", 13..len - 16),
            ("aead_tag", len - 16..len),
        ],
    }
}

/// Bit positions swept for a message class: 64 evenly spaced, or all of them.
pub fn sweep_positions(kind: MessageKind, full: bool) -> Vec<usize> {
    let bits = kind.wire_len() * 8;
    if full {
        (0..bits).collect()
    } else {
        (0..64).map(|i| i * bits / 64).collect()
    }
}

pub fn mutate<R: RngCore>(bytes: &[u8], kind: MessageKind, m: Mutation, rng: &mut R) -> Vec<u8> {
    let mut out = bytes.to_vec();
    match m {
        Mutation::BitFlip(pos) => out[pos / 8] ^= 0x80 >> (pos % 8),
        Mutation::Field(n) => {
            let range = fields(kind)[n].1.clone();
            rng.fill_bytes(&mut out[range.clone()]);
            if out[range.clone()] == bytes[range.clone()] {
                out[range.start] ^= 1;
            }
        }
    }
    out
}

struct MitmTap {
    kind: MessageKind,
    mutation: Mutation,
    rng: ChaCha20Rng,
}

impl Tap for MitmTap {
    fn on_packet(&mut self, pkt: &Observed, _ctx: &mut TapCtx) -> TapAction {
        if pkt.kind == self.kind && pkt.index == 0 {
            TapAction::Replace(mutate(&pkt.bytes, self.kind, self.mutation, &mut self.rng))
        } else {
            TapAction::Forward
        }
    }
}

/// One MiTM trial with a specific mutation.
pub fn run_mitm_trial(
    scenario: &Scenario,
    kind: MessageKind,
    mutation: Mutation,
    rng_seed: u64,
) -> Result<RunReport, ScenarioError> {
    let case = AttackCase::MITM[usize::from(kind.tag() - 1)];
    let tap = MitmTap {
        kind,
        mutation,
        rng: ChaCha20Rng::seed_from_u64(rng_seed),
    };
    Ok(run_world(scenario, case, 0, tap)?.0)
}

fn run_mitm<R: Rng>(
    scenario: &Scenario,
    case: AttackCase,
    full_sweep: bool,
    rng: &mut R,
) -> Result<(RunReport, AttackVerdict), ScenarioError> {
    let kind = case.message_kind().expect("MiTM cases name a message");
    let mut mutations: Vec<Mutation> = sweep_positions(kind, full_sweep)
        .into_iter()
        .map(Mutation::BitFlip)
        .collect();
    mutations.extend((0..fields(kind).len()).map(Mutation::Field));
    let mut first: Option<(RunReport, AttackVerdict)> = None;
    let mut accepted = 0u64;
    let mut worst: Option<(RunReport, AttackVerdict)> = None;
    for m in &mutations {
        let report = run_mitm_trial(scenario, kind, *m, rng.gen())?;
        let mut v = AttackVerdict::from_report(case, scenario.scenario_seed, &report);
        v.notes.push(format!("{m:?}"));
        if v.attack_succeeded {
            accepted += 1;
            worst.get_or_insert((report.clone(), v.clone()));
        }
        first.get_or_insert((report, v));
    }
    let (report, mut v) = worst.or(first).expect("at least one mutation");
    v.trials = mutations.len() as u64;
    v.accepted_trials = accepted;
    v.attack_succeeded = accepted > 0;
    v.settle();
    v.notes.insert(
        0,
        format!(
            "{} bit positions plus {} field rewrites of {kind}",
            mutations.len() - fields(kind).len(),
            fields(kind).len()
        ),
    );
    Ok((report, v))
}

// ---- cloning ----

const CLONE_SNAPSHOT_TIMER: u64 = 4;

struct CloneTap {
    case: AttackCase,
    delay: u64,
    activate_at: Option<u64>,
    last_m5: u64,
    interleave_step: u8,
}

impl Tap for CloneTap {
    fn on_start(&mut self, ctx: &mut TapCtx) {
        let i = ctx.session_config().ca_round_interval_ms;
        // Capture after the first CA round, so the copy holds a live exponent and
        // counter. Only the after-expiry clone sits on its copy; the others are
        // extracted right before going live.
        let capture = i + i / 2;
        if self.case == AttackCase::CloneAfterExpiry {
            ctx.timer(capture, CLONE_SNAPSHOT_TIMER);
        } else {
            ctx.timer(capture + self.delay, CLONE_SNAPSHOT_TIMER);
        }
    }

    fn on_packet(&mut self, pkt: &Observed, ctx: &mut TapCtx) -> TapAction {
        if pkt.kind == MessageKind::M5 {
            self.last_m5 = pkt.time;
        }
        let live = self.activate_at.is_some_and(|t| ctx.now() >= t);
        if self.case == AttackCase::CloneInterleaved && live && pkt.kind == MessageKind::M7 {
            use crate::harness::world::NodeRole;
            self.interleave_step += 1;
            return match self.interleave_step {
                1 => TapAction::Exclude(NodeRole::Original),
                2 => TapAction::Exclude(NodeRole::Clone),
                _ => TapAction::Forward,
            };
        }
        TapAction::Forward
    }

    fn on_timer(&mut self, _token: u64, ctx: &mut TapCtx) {
        let cfg = ctx.session_config();
        let at = if self.case == AttackCase::CloneAfterExpiry {
            ctx.now() + self.delay
        } else {
            ctx.now()
        };
        self.activate_at = Some(at);
        ctx.snapshot_clone(at);
        let t_end = self.last_m5 + cfg.session_duration_ms;
        match self.case {
            AttackCase::CloneWithinTSilent => {
                let i = cfg.ca_round_interval_ms;
                ctx.set_original_online(at, false);
                ctx.set_original_online(t_end + i / 2, true);
            }
            AttackCase::CloneSilentPastExpiry => {
                let i = cfg.ca_round_interval_ms;
                ctx.set_original_online(at, false);
                ctx.set_original_online(t_end + 2 * i + i / 2, true);
            }
            _ => {}
        }
    }
}

// ---- sybil ----

struct DuplicateEnrollTap;

impl Tap for DuplicateEnrollTap {
    fn on_start(&mut self, ctx: &mut TapCtx) {
        ctx.enroll_duplicate();
    }
}
