//! Role drivers shared by the simulator and the UDP runtime.
//!
//! A node consumes packets and timer ticks and emits packets addressed to
//! symbolic [`Peer`]s. The host resolves peers to concrete endpoints, so the
//! same protocol code runs in both environments.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use bytes::{BufMut, Bytes, BytesMut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apps::{AppKind, KvOp, Replica, Reply};
use crate::client::{Envelope, Learner, Outgoing, Proposer, ProposerConfig, ProposerEvent, RecoverError};
use crate::dataplane::{AcceptorState, CoordinatorState, Destinations, Emitted};
use crate::wire::{MsgType, PaxosMessage};

/// Symbolic destination of an outgoing packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Peer {
    /// The coordinator currently serving requests.
    Coordinator,
    Acceptors,
    Learners,
    /// Sender of the packet being processed. Hosts skip this when the sender
    /// is a coordinator, which has no use for votes.
    Requester,
    /// The proposer with this client id.
    Client(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Paxos(PaxosMessage),
    Reply(Reply),
    /// Control command: stop serving instances up to and including this one.
    Trim(u32),
}

pub type Outbox = Vec<(Peer, Packet)>;

/// Timer settings shared by proposers and learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timing {
    pub retransmit_timeout_us: u64,
    pub max_retries: u32,
    /// How long a hole below the highest delivered instance may persist
    /// before the learner recovers it.
    pub gap_timeout_us: u64,
    /// How long a learner waits without progress before probing the
    /// instance after its last delivery.
    pub idle_probe_us: u64,
    pub tail_probe: bool,
    pub max_concurrent_recoveries: usize,
    /// Recovery attempts (each up to `max_retries` rounds) spent on one
    /// instance before it is abandoned.
    pub recover_campaigns: u32,
}

impl Timing {
    pub fn sim() -> Self {
        Timing {
            retransmit_timeout_us: 50_000,
            max_retries: 10,
            gap_timeout_us: 20_000,
            idle_probe_us: 200_000,
            tail_probe: true,
            max_concurrent_recoveries: 64,
            recover_campaigns: 3,
        }
    }

    pub fn udp() -> Self {
        Timing { retransmit_timeout_us: 200_000, gap_timeout_us: 100_000, idle_probe_us: 1_000_000, ..Timing::sim() }
    }

    pub fn retransmit_timeout(&self) -> Duration {
        Duration::from_micros(self.retransmit_timeout_us)
    }

    fn gap_timeout(&self) -> Duration {
        Duration::from_micros(self.gap_timeout_us)
    }

    fn gap_scan_interval(&self) -> Duration {
        Duration::from_micros((self.gap_timeout_us / 2).max(1))
    }

    fn idle_probe(&self) -> Duration {
        Duration::from_micros(self.idle_probe_us)
    }
}

impl Default for Timing {
    fn default() -> Self {
        Timing::sim()
    }
}

fn push_emitted(e: Emitted, out: &mut Outbox) {
    let Emitted { msg, dest } = e;
    for (flag, peer) in [
        (Destinations::ACCEPTORS, Peer::Acceptors),
        (Destinations::LEARNERS, Peer::Learners),
        (Destinations::REQUESTER, Peer::Requester),
    ] {
        if dest.contains(flag) {
            out.push((peer, Packet::Paxos(msg.clone())));
        }
    }
}

#[derive(Debug)]
pub struct CoordinatorNode {
    state: CoordinatorState,
    active: bool,
    swid: u64,
}

impl CoordinatorNode {
    pub fn new(start_inst: u32, swid: u64) -> Self {
        CoordinatorNode { state: CoordinatorState::new(start_inst, swid), active: true, swid }
    }

    /// A standby that ignores traffic until [`activate`](Self::activate).
    pub fn standby(swid: u64) -> Self {
        CoordinatorNode { active: false, ..CoordinatorNode::new(0, swid) }
    }

    /// Takes over sequencing, starting at `start_inst`.
    pub fn activate(&mut self, start_inst: u32) {
        self.state = CoordinatorState::new(start_inst, self.swid);
        self.active = true;
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn state(&self) -> &CoordinatorState {
        &self.state
    }

    fn on_packet(&mut self, packet: Packet, out: &mut Outbox) {
        if let (true, Packet::Paxos(msg)) = (self.active, packet) {
            if let Ok(Some(e)) = self.state.process(msg) {
                push_emitted(e, out);
            }
        }
    }
}

#[derive(Debug)]
pub struct AcceptorNode {
    state: AcceptorState,
}

impl AcceptorNode {
    pub fn new(swid: u64, capacity: usize) -> Self {
        AcceptorNode { state: AcceptorState::new(swid, capacity) }
    }

    pub fn state(&self) -> &AcceptorState {
        &self.state
    }

    /// Restart with empty memory.
    pub fn reset(&mut self) {
        self.state = AcceptorState::new(self.state.swid(), self.state.capacity());
    }

    fn on_packet(&mut self, packet: Packet, out: &mut Outbox) {
        match packet {
            Packet::Paxos(msg) => {
                if let Some(e) = self.state.process(msg) {
                    push_emitted(e, out);
                }
            }
            Packet::Trim(inst) => self.state.trim(inst),
            Packet::Reply(_) => {}
        }
    }
}

/// A delivered instance as seen by one learner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub time: Duration,
    pub inst: u32,
    pub rnd: u16,
    pub value: Bytes,
}

#[derive(Debug, Clone)]
pub struct LearnerConfig {
    pub acceptors: usize,
    /// Recovery proposer co-located with the learner.
    pub proposer: ProposerConfig,
    pub app: AppKind,
    /// Whether this replica answers clients.
    pub responder: bool,
    pub timing: Timing,
}

/// Learner with its application replica and a co-located proposer used to
/// recover missing instances.
#[derive(Debug)]
pub struct LearnerNode {
    learner: Learner,
    proposer: Proposer,
    replica: Replica,
    responder: bool,
    timing: Timing,
    gap_since: BTreeMap<u32, Duration>,
    abandoned: BTreeSet<u32>,
    campaigns: BTreeMap<u32, u32>,
    next_scan: Option<Duration>,
    last_progress: Duration,
    probe_budget: u32,
    deliveries: Vec<DeliveryRecord>,
    recovered: u64,
    recover_failures: Vec<(u32, RecoverError)>,
    outgoing: Vec<Outgoing>,
}

impl LearnerNode {
    pub fn new(cfg: LearnerConfig) -> Self {
        LearnerNode {
            learner: Learner::new(cfg.acceptors),
            proposer: Proposer::new(cfg.proposer),
            replica: Replica::new(cfg.app),
            responder: cfg.responder,
            timing: cfg.timing,
            gap_since: BTreeMap::new(),
            abandoned: BTreeSet::new(),
            campaigns: BTreeMap::new(),
            next_scan: None,
            last_progress: Duration::ZERO,
            probe_budget: 0,
            deliveries: Vec::new(),
            recovered: 0,
            recover_failures: Vec::new(),
            outgoing: Vec::new(),
        }
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn learner_mut(&mut self) -> &mut Learner {
        &mut self.learner
    }

    pub fn replica(&self) -> &Replica {
        &self.replica
    }

    pub fn deliveries(&self) -> &[DeliveryRecord] {
        &self.deliveries
    }

    pub fn recovered(&self) -> u64 {
        self.recovered
    }

    pub fn recover_failures(&self) -> &[(u32, RecoverError)] {
        &self.recover_failures
    }

    /// Starts recovering `inst` with this replica's no-op.
    pub fn recover(&mut self, inst: u32, now: Duration) -> Result<(), RecoverError> {
        let noop = Envelope::noop(u64::from(inst)).encode();
        self.proposer.recover(inst, &noop, now, &mut self.outgoing)?;
        self.learner.tally_mut().begin_recovery(inst);
        Ok(())
    }

    fn flush_proposer(&mut self, out: &mut Outbox) {
        for o in self.outgoing.drain(..) {
            match o {
                Outgoing::Acceptors(m) => out.push((Peer::Acceptors, Packet::Paxos(m))),
                Outgoing::Coordinator(m) => out.push((Peer::Coordinator, Packet::Paxos(m))),
            }
        }
        for ev in self.proposer.drain_events() {
            match ev {
                ProposerEvent::Recovered { inst, .. } => {
                    self.recovered += 1;
                    self.campaigns.remove(&inst);
                    self.learner.tally_mut().end_recovery(inst);
                }
                ProposerEvent::RecoverFailed { inst, error } => {
                    self.learner.tally_mut().end_recovery(inst);
                    let n = self.campaigns.entry(inst).or_insert(0);
                    *n += 1;
                    if *n >= self.timing.recover_campaigns || error != RecoverError::Timeout {
                        self.campaigns.remove(&inst);
                        self.abandoned.insert(inst);
                    } else {
                        // retry once the gap has aged again
                        self.gap_since.remove(&inst);
                    }
                    self.recover_failures.push((inst, error));
                }
                ProposerEvent::Failed { .. } => {}
            }
        }
    }

    fn on_packet(&mut self, now: Duration, packet: Packet, out: &mut Outbox) {
        let Packet::Paxos(msg) = packet else {
            return;
        };
        if matches!(msg.msgtype, MsgType::Phase1b | MsgType::Phase2b) {
            self.proposer.handle(&msg, now, &mut self.outgoing);
        }
        if let Ok(Some(ev)) = self.learner.process(&msg) {
            if self.proposer.cancel_recovery(ev.inst) {
                self.learner.tally_mut().end_recovery(ev.inst);
            }
            if let Ok(f) = u32::try_from(self.learner.tally().frontier()) {
                self.proposer.forget_below(f);
            }
            self.gap_since.remove(&ev.inst);
            self.last_progress = now;
            let noop = Envelope::decode(&ev.value).is_none_or(|e| e.is_noop());
            if !noop {
                self.probe_budget = 1;
            }
            for reply in self.replica.on_deliver(ev.inst, &ev.value) {
                if self.responder {
                    out.push((Peer::Client(reply.client_id), Packet::Reply(reply)));
                }
            }
            self.deliveries.push(DeliveryRecord { time: now, inst: ev.inst, rnd: ev.rnd, value: ev.value });
            if self.next_scan.is_none() && self.has_open_gaps() {
                self.next_scan = Some(now + self.timing.gap_scan_interval());
            }
        }
        self.flush_proposer(out);
    }

    fn on_tick(&mut self, now: Duration, out: &mut Outbox) {
        self.proposer.poll_timeouts(now, &mut self.outgoing);
        self.flush_proposer(out);

        if self.next_scan.is_some_and(|t| t <= now) {
            self.scan_gaps(now);
            self.next_scan = self.has_open_gaps().then(|| now + self.timing.gap_scan_interval());
        }

        if self.probe_due(now) {
            self.probe_budget = 0;
            let t = self.learner.tally();
            let next = t.max_delivered().map_or(t.frontier(), |m| u64::from(m) + 1);
            if let Ok(inst) = u32::try_from(next) {
                let _ = self.recover(inst, now);
            }
        }
        self.flush_proposer(out);
    }

    /// Gaps that may still be recovered; abandoned ones are left alone.
    fn has_open_gaps(&self) -> bool {
        let t = self.learner.tally();
        t.has_gaps() && t.gaps().iter().any(|i| !self.abandoned.contains(i))
    }

    fn scan_gaps(&mut self, now: Duration) {
        let gaps = self.learner.tally().gaps();
        let open: BTreeSet<u32> = gaps.iter().copied().collect();
        self.gap_since.retain(|i, _| open.contains(i));
        for inst in gaps {
            let since = *self.gap_since.entry(inst).or_insert(now);
            if now < since + self.timing.gap_timeout()
                || self.abandoned.contains(&inst)
                || self.proposer.is_recovering(inst)
            {
                continue;
            }
            if self.proposer.active_recoveries() >= self.timing.max_concurrent_recoveries {
                break;
            }
            let _ = self.recover(inst, now);
        }
    }

    fn probe_due(&self, now: Duration) -> bool {
        self.timing.tail_probe
            && self.probe_budget > 0
            && !self.has_open_gaps()
            && self.proposer.active_recoveries() == 0
            && now >= self.last_progress + self.timing.idle_probe()
    }

    fn next_deadline(&self) -> Option<Duration> {
        let probe = (self.timing.tail_probe
            && self.probe_budget > 0
            && !self.has_open_gaps()
            && self.proposer.active_recoveries() == 0)
            .then(|| self.last_progress + self.timing.idle_probe());
        [self.proposer.next_deadline(), self.next_scan, probe].into_iter().flatten().min()
    }
}

/// What a client submits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Workload {
    /// Values carrying the submit timestamp, padded to `value_size`.
    Echo { value_size: usize },
    /// 50/50 GET/PUT over `keys` keys with `value_size`-byte values.
    KvMixed { value_size: usize, keys: u32 },
    /// Fixed payloads, submitted in order.
    Script { payloads: Vec<Vec<u8>> },
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub proposer: ProposerConfig,
    /// Logical closed-loop clients multiplexed over the proposer.
    pub concurrency: usize,
    pub messages: u64,
    pub workload: Workload,
    pub seed: u64,
}

/// Closed-loop load generator: keeps `concurrency` requests outstanding and
/// submits a new one as soon as a reply arrives.
#[derive(Debug)]
pub struct ClientNode {
    proposer: Proposer,
    concurrency: usize,
    messages: u64,
    workload: Workload,
    rng: ChaCha8Rng,
    submitted: u64,
    completed: u64,
    failed: u64,
    latencies: Vec<Duration>,
    replies: Vec<Reply>,
    keep_replies: bool,
    consecutive_timeouts: u32,
    outgoing: Vec<Outgoing>,
}

impl ClientNode {
    pub fn new(cfg: ClientConfig) -> Self {
        let messages = match &cfg.workload {
            Workload::Script { payloads } => cfg.messages.min(payloads.len() as u64),
            _ => cfg.messages,
        };
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ cfg.proposer.client_id.rotate_left(17));
        ClientNode {
            proposer: Proposer::new(cfg.proposer),
            concurrency: cfg.concurrency.max(1),
            messages,
            workload: cfg.workload,
            rng,
            submitted: 0,
            completed: 0,
            failed: 0,
            latencies: Vec::new(),
            replies: Vec::new(),
            keep_replies: false,
            consecutive_timeouts: 0,
            outgoing: Vec::new(),
        }
    }

    /// Keep reply payloads (off by default to bound memory in long runs).
    pub fn keep_replies(&mut self, keep: bool) {
        self.keep_replies = keep;
    }

    pub fn proposer(&self) -> &Proposer {
        &self.proposer
    }

    pub fn submitted(&self) -> u64 {
        self.submitted
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn failed(&self) -> u64 {
        self.failed
    }

    pub fn latencies(&self) -> &[Duration] {
        &self.latencies
    }

    pub fn replies(&self) -> &[Reply] {
        &self.replies
    }

    pub fn is_done(&self) -> bool {
        self.completed + self.failed >= self.messages
    }

    /// Retransmission rounds since the last reply.
    pub fn consecutive_timeouts(&self) -> u32 {
        self.consecutive_timeouts
    }

    fn next_payload(&mut self, now: Duration) -> Bytes {
        match &self.workload {
            Workload::Echo { value_size } => {
                let mut b = BytesMut::with_capacity((*value_size).max(8));
                b.put_u64(now.as_micros() as u64);
                b.resize((*value_size).max(8), 0);
                b.freeze()
            }
            Workload::KvMixed { value_size, keys } => {
                let key = format!("key{}", self.rng.random_range(0..(*keys).max(1)));
                let op = if self.rng.random_bool(0.5) {
                    KvOp::get(key.into_bytes())
                } else {
                    let v: Vec<u8> = (0..*value_size).map(|_| self.rng.random()).collect();
                    KvOp::put(key.into_bytes(), v)
                };
                op.encode().expect("generated key is valid")
            }
            Workload::Script { payloads } => Bytes::from(payloads[self.submitted as usize].clone()),
        }
    }

    fn submit_next(&mut self, now: Duration) {
        if self.submitted >= self.messages {
            return;
        }
        let payload = self.next_payload(now);
        self.submitted += 1;
        if self.proposer.submit(&payload, now, &mut self.outgoing).is_err() {
            self.failed += 1;
        }
    }

    fn flush(&mut self, out: &mut Outbox) {
        for o in self.outgoing.drain(..) {
            match o {
                Outgoing::Coordinator(m) => out.push((Peer::Coordinator, Packet::Paxos(m))),
                Outgoing::Acceptors(m) => out.push((Peer::Acceptors, Packet::Paxos(m))),
            }
        }
    }

    fn start(&mut self, now: Duration, out: &mut Outbox) {
        while self.submitted < self.messages && (self.submitted as usize) < self.concurrency {
            self.submit_next(now);
        }
        self.flush(out);
    }

    fn on_packet(&mut self, now: Duration, packet: Packet, out: &mut Outbox) {
        match packet {
            Packet::Reply(reply) => {
                if let Some(t0) = self.proposer.resolve(reply.req_seq) {
                    self.latencies.push(now - t0);
                    self.completed += 1;
                    self.consecutive_timeouts = 0;
                    if self.keep_replies {
                        self.replies.push(reply);
                    }
                    self.submit_next(now);
                }
            }
            Packet::Paxos(msg) => self.proposer.handle(&msg, now, &mut self.outgoing),
            Packet::Trim(_) => {}
        }
        self.flush(out);
    }

    fn on_tick(&mut self, now: Duration, out: &mut Outbox) {
        let before = self.proposer.retransmissions();
        self.proposer.poll_timeouts(now, &mut self.outgoing);
        if self.proposer.retransmissions() > before {
            self.consecutive_timeouts += 1;
        }
        for ev in self.proposer.drain_events() {
            if let ProposerEvent::Failed { .. } = ev {
                self.failed += 1;
                self.submit_next(now);
            }
        }
        self.flush(out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleKind {
    Proposer,
    Coordinator,
    Acceptor,
    Learner,
}

impl std::fmt::Display for RoleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RoleKind::Proposer => "proposer",
            RoleKind::Coordinator => "coordinator",
            RoleKind::Acceptor => "acceptor",
            RoleKind::Learner => "learner",
        })
    }
}

impl std::str::FromStr for RoleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposer" => Ok(RoleKind::Proposer),
            "coordinator" => Ok(RoleKind::Coordinator),
            "acceptor" => Ok(RoleKind::Acceptor),
            "learner" => Ok(RoleKind::Learner),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug)]
pub enum Node {
    Client(Box<ClientNode>),
    Coordinator(CoordinatorNode),
    Acceptor(AcceptorNode),
    Learner(Box<LearnerNode>),
}

impl Node {
    pub fn kind(&self) -> RoleKind {
        match self {
            Node::Client(_) => RoleKind::Proposer,
            Node::Coordinator(_) => RoleKind::Coordinator,
            Node::Acceptor(_) => RoleKind::Acceptor,
            Node::Learner(_) => RoleKind::Learner,
        }
    }

    pub fn start(&mut self, now: Duration, out: &mut Outbox) {
        if let Node::Client(c) = self {
            c.start(now, out);
        }
    }

    pub fn on_packet(&mut self, now: Duration, packet: Packet, out: &mut Outbox) {
        match self {
            Node::Client(c) => c.on_packet(now, packet, out),
            Node::Coordinator(c) => c.on_packet(packet, out),
            Node::Acceptor(a) => a.on_packet(packet, out),
            Node::Learner(l) => l.on_packet(now, packet, out),
        }
    }

    pub fn on_tick(&mut self, now: Duration, out: &mut Outbox) {
        match self {
            Node::Client(c) => c.on_tick(now, out),
            Node::Learner(l) => l.on_tick(now, out),
            Node::Coordinator(_) | Node::Acceptor(_) => {}
        }
    }

    pub fn next_deadline(&self) -> Option<Duration> {
        match self {
            Node::Client(c) => c.proposer.next_deadline(),
            Node::Learner(l) => l.next_deadline(),
            Node::Coordinator(_) | Node::Acceptor(_) => None,
        }
    }

    /// Role-internal counters as `name -> value`.
    pub fn counters(&self) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::new();
        match self {
            Node::Client(c) => {
                m.insert("submitted".into(), c.submitted);
                m.insert("completed".into(), c.completed);
                m.insert("failed".into(), c.failed);
                m.insert("retransmissions".into(), c.proposer.retransmissions());
            }
            Node::Coordinator(c) => {
                c.state.metrics().export(&mut m);
                if let Some(next) = c.state.next_inst() {
                    m.insert("next_inst".into(), u64::from(next));
                }
            }
            Node::Acceptor(a) => {
                a.state.metrics().export(&mut m);
                m.insert("trim_watermark".into(), a.state.trim_watermark());
            }
            Node::Learner(l) => {
                let t = l.learner.tally();
                m.insert("delivered".into(), t.delivered_count());
                m.insert("frontier".into(), t.frontier());
                m.insert("value_mismatches".into(), t.mismatches());
                m.insert("recovered".into(), l.recovered);
                m.insert("recover_failures".into(), l.recover_failures.len() as u64);
                m.insert("applied".into(), l.replica.applied().len() as u64);
                m.insert("duplicates".into(), l.replica.duplicates());
                m.insert("noops".into(), l.replica.noops());
            }
        }
        m
    }
}
