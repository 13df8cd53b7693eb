//! Deterministic discrete-event simulator hosting every role.
//!
//! All events sit in one virtual-time queue ordered by `(time, sequence)`.
//! Loss, duplication and jitter are drawn from a single seeded generator, so
//! a run is a pure function of its [`SimConfig`].

mod config;
mod trace;

pub use config::{
    FaultAction, FaultEvent, Jitter, LinkConfig, LinkOverride, LinkParams, RoleId, ServiceTimes, SimConfig,
    SimWorkload, Topology,
};
pub use trace::{Conservation, EventKind, RoleSummary, SimTrace, Snapshot, TraceEvent};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::client::ProposerConfig;
use crate::node::{
    AcceptorNode, ClientConfig, ClientNode, CoordinatorNode, DeliveryRecord, LearnerConfig, LearnerNode, Node, Outbox,
    Packet, Peer, RoleKind,
};
use crate::wire::MsgType;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("bad topology: {0}")]
    BadTopology(String),
    #[error("fault scheduled at {at_us}us but the simulation is already at {now_us}us")]
    PastTime { at_us: u64, now_us: u64 },
    #[error("invalid simulation config: {0}")]
    Config(String),
}

/// Identifier swid values use for each role kind.
pub fn swid_of(id: RoleId) -> u64 {
    let base = match id.role {
        RoleKind::Coordinator => 0x1000,
        RoleKind::Acceptor => 0x2000,
        RoleKind::Learner => 0x3000,
        RoleKind::Proposer => 0x4000,
    };
    base + u64::from(id.index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Until {
    Quiescence,
    Time(Duration),
}

#[derive(Debug)]
enum EventBody {
    Start(usize),
    Arrive { from: usize, to: usize, packet: Packet },
    Wake(usize),
    Fault(FaultEvent),
}

#[derive(Debug)]
struct Scheduled {
    time: Duration,
    seq: u64,
    body: EventBody,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

#[derive(Debug)]
struct SimNode {
    id: RoleId,
    node: Node,
    alive: bool,
    busy_until: Duration,
    service: Duration,
    wake_at: Option<Duration>,
    received: [u64; 5],
    received_replies: u64,
    received_trims: u64,
}

/// A built simulation. Drive it with [`run`](Simulation::run) and inspect it
/// with [`trace`](Simulation::trace) and the role accessors.
#[derive(Debug)]
pub struct Simulation {
    cfg: SimConfig,
    nodes: Vec<SimNode>,
    index: HashMap<RoleId, usize>,
    acceptors: Vec<usize>,
    learners: Vec<usize>,
    clients: HashMap<u64, usize>,
    coordinator: usize,
    links: Vec<LinkParams>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    now: Duration,
    rng: ChaCha8Rng,
    events: Vec<TraceEvent>,
    conservation: Conservation,
}

impl Simulation {
    /// Instantiates every role and queues the start and fault events. Nothing
    /// runs until [`run`](Self::run).
    pub fn build(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let topo = cfg.topology.clone();
        let acceptor_count = usize::from(topo.acceptors);
        let max_proposers = topo.proposers + topo.learners;
        let proposer_cfg = |id: RoleId, proposer_index: u16| ProposerConfig {
            client_id: swid_of(id),
            proposer_index,
            max_proposers,
            acceptors: acceptor_count,
            retransmit_timeout: cfg.timing.retransmit_timeout(),
            max_retries: cfg.timing.max_retries,
        };

        let mut roles: Vec<(RoleId, Node)> = Vec::new();
        for i in 0..topo.proposers {
            let id = RoleId::proposer(i);
            roles.push((
                id,
                Node::Client(Box::new(ClientNode::new(ClientConfig {
                    proposer: proposer_cfg(id, i),
                    concurrency: cfg.workload.concurrency,
                    messages: cfg.workload.messages,
                    workload: cfg.workload.workload.clone(),
                    seed: cfg.seed,
                }))),
            ));
        }
        roles.push((
            RoleId::coordinator(0),
            Node::Coordinator(CoordinatorNode::new(0, swid_of(RoleId::coordinator(0)))),
        ));
        if topo.backup_coordinator {
            roles.push((
                RoleId::coordinator(1),
                Node::Coordinator(CoordinatorNode::standby(swid_of(RoleId::coordinator(1)))),
            ));
        }
        for i in 0..topo.acceptors {
            let id = RoleId::acceptor(i);
            roles.push((id, Node::Acceptor(AcceptorNode::new(swid_of(id), cfg.acceptor_capacity))));
        }
        for i in 0..topo.learners {
            let id = RoleId::learner(i);
            roles.push((
                id,
                Node::Learner(Box::new(LearnerNode::new(LearnerConfig {
                    acceptors: acceptor_count,
                    proposer: proposer_cfg(id, topo.proposers + i),
                    app: cfg.app,
                    responder: i == topo.responder,
                    timing: cfg.timing,
                }))),
            ));
        }

        let mut index = HashMap::new();
        let mut acceptors = Vec::new();
        let mut learners = Vec::new();
        let mut clients = HashMap::new();
        let nodes: Vec<SimNode> = roles
            .into_iter()
            .enumerate()
            .map(|(i, (id, node))| {
                index.insert(id, i);
                match id.role {
                    RoleKind::Acceptor => acceptors.push(i),
                    RoleKind::Learner => learners.push(i),
                    RoleKind::Proposer => {
                        clients.insert(swid_of(id), i);
                    }
                    RoleKind::Coordinator => {}
                }
                SimNode {
                    id,
                    node,
                    alive: true,
                    busy_until: Duration::ZERO,
                    service: Duration::from_micros(cfg.service_time.for_role(id.role)),
                    wake_at: None,
                    received: [0; 5],
                    received_replies: 0,
                    received_trims: 0,
                }
            })
            .collect();

        let n = nodes.len();
        let mut links = vec![cfg.links.default; n * n];
        for o in &cfg.links.overrides {
            links[index[&o.src] * n + index[&o.dst]] = o.params;
        }

        let mut sim = Simulation {
            coordinator: index[&RoleId::coordinator(0)],
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            nodes,
            index,
            acceptors,
            learners,
            clients,
            links,
            queue: BinaryHeap::new(),
            seq: 0,
            now: Duration::ZERO,
            events: Vec::new(),
            conservation: Conservation::default(),
        };
        for i in 0..n {
            if sim.nodes[i].id.role == RoleKind::Proposer {
                sim.push(Duration::ZERO, EventBody::Start(i));
            }
        }
        for f in sim.cfg.faults.clone() {
            sim.push(Duration::from_micros(f.time_us), EventBody::Fault(f));
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> Duration {
        self.now
    }

    /// Enqueues a fault. It must not be in the simulated past.
    pub fn inject(&mut self, fault: FaultEvent) -> Result<(), SimError> {
        let at = Duration::from_micros(fault.time_us);
        if at < self.now {
            return Err(SimError::PastTime { at_us: fault.time_us, now_us: self.now.as_micros() as u64 });
        }
        if !self.cfg.topology.contains(fault.target) {
            return Err(SimError::BadTopology(format!("fault target {} is not in the topology", fault.target)));
        }
        self.push(at, EventBody::Fault(fault));
        Ok(())
    }

    fn push(&mut self, time: Duration, body: EventBody) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { time, seq: self.seq, body }));
    }

    fn record(&mut self, kind: EventKind, from: Option<usize>, to: Option<usize>, packet: Option<&Packet>) {
        if !self.cfg.record_trace {
            return;
        }
        self.events.push(TraceEvent {
            t_us: self.now.as_micros() as u64,
            kind,
            from: from.map(|i| self.nodes[i].id),
            to: to.map(|i| self.nodes[i].id),
            packet: packet.map(Snapshot::of),
            fault: None,
        });
    }

    /// Processes events in order until the queue drains or `until` passes.
    /// Returns the number of events handled.
    pub fn run(&mut self, until: Until) -> u64 {
        let cap = self.cfg.max_time_us.map(Duration::from_micros);
        let limit = match (until, cap) {
            (Until::Time(t), Some(c)) => Some(t.min(c)),
            (Until::Time(t), None) => Some(t),
            (Until::Quiescence, c) => c,
        };
        let mut handled = 0;
        while let Some(Reverse(next)) = self.queue.peek() {
            if limit.is_some_and(|l| next.time > l) {
                break;
            }
            let Reverse(ev) = self.queue.pop().unwrap();
            self.now = ev.time;
            handled += 1;
            match ev.body {
                EventBody::Start(i) => {
                    let mut out = Outbox::new();
                    self.nodes[i].node.start(self.now, &mut out);
                    self.dispatch(i, None, out, self.now);
                    self.schedule_wake(i);
                }
                EventBody::Arrive { from, to, packet } => self.arrive(from, to, packet),
                EventBody::Wake(i) => self.wake(i, ev.time),
                EventBody::Fault(f) => self.apply_fault(f),
            }
        }
        if let Some(l) = limit {
            if self.queue.peek().is_some() {
                self.now = self.now.max(l);
            }
        }
        handled
    }

    fn arrive(&mut self, from: usize, to: usize, packet: Packet) {
        self.conservation.arrived += 1;
        if !self.nodes[to].alive {
            self.record(EventKind::Discard, Some(from), Some(to), Some(&packet));
            return;
        }
        let busy = self.nodes[to].busy_until;
        if busy > self.now {
            // node is busy: the message waits, but it has already arrived
            self.conservation.arrived -= 1;
            self.push(busy, EventBody::Arrive { from, to, packet });
            return;
        }
        self.record(EventKind::Receive, Some(from), Some(to), Some(&packet));
        let before = self.delivered_len(to);
        let node = &mut self.nodes[to];
        match &packet {
            Packet::Paxos(m) => node.received[m.msgtype as usize] += 1,
            Packet::Reply(_) => node.received_replies += 1,
            Packet::Trim(_) => node.received_trims += 1,
        }
        let mut out = Outbox::new();
        node.node.on_packet(self.now, packet, &mut out);
        node.busy_until = self.now + node.service;
        let send_at = node.busy_until;
        self.record_deliveries(to, before);
        self.dispatch(to, Some(from), out, send_at);
        self.schedule_wake(to);
    }

    fn delivered_len(&self, i: usize) -> usize {
        match &self.nodes[i].node {
            Node::Learner(l) if self.cfg.record_trace => l.deliveries().len(),
            _ => 0,
        }
    }

    fn record_deliveries(&mut self, i: usize, before: usize) {
        if !self.cfg.record_trace {
            return;
        }
        let Node::Learner(l) = &self.nodes[i].node else {
            return;
        };
        let new: Vec<DeliveryRecord> = l.deliveries()[before..].to_vec();
        for d in new {
            self.events.push(TraceEvent {
                t_us: self.now.as_micros() as u64,
                kind: EventKind::Deliver,
                from: None,
                to: Some(self.nodes[i].id),
                packet: Some(Snapshot::Paxos {
                    msgtype: "deliver",
                    inst: d.inst,
                    rnd: d.rnd,
                    vrnd: d.rnd,
                    swid: 0,
                    value: hex::encode(&d.value),
                }),
                fault: None,
            });
        }
    }

    fn wake(&mut self, i: usize, at: Duration) {
        if self.nodes[i].wake_at != Some(at) {
            return;
        }
        self.nodes[i].wake_at = None;
        if !self.nodes[i].alive {
            return;
        }
        let before = self.delivered_len(i);
        let mut out = Outbox::new();
        self.nodes[i].node.on_tick(self.now, &mut out);
        self.record_deliveries(i, before);
        self.dispatch(i, None, out, self.now);
        self.schedule_wake(i);
    }

    fn schedule_wake(&mut self, i: usize) {
        let Some(deadline) = self.nodes[i].node.next_deadline() else {
            return;
        };
        let at = deadline.max(self.now);
        if self.nodes[i].wake_at.is_none_or(|w| at < w) {
            self.nodes[i].wake_at = Some(at);
            self.push(at, EventBody::Wake(i));
        }
    }

    fn resolve(&self, src: usize, requester: Option<usize>, peer: Peer, targets: &mut Vec<usize>) {
        match peer {
            Peer::Coordinator => targets.push(self.coordinator),
            Peer::Acceptors => targets.extend(&self.acceptors),
            Peer::Learners => targets.extend(&self.learners),
            Peer::Requester => {
                if let Some(r) = requester {
                    if self.nodes[r].id.role != RoleKind::Coordinator && r != src {
                        targets.push(r);
                    }
                }
            }
            Peer::Client(id) => targets.extend(self.clients.get(&id)),
        }
    }

    fn dispatch(&mut self, src: usize, requester: Option<usize>, out: Outbox, send_at: Duration) {
        let mut targets: Vec<usize> = Vec::new();
        let mut prev: Option<Packet> = None;
        let mut group: Vec<usize> = Vec::new();
        for (peer, packet) in out {
            if prev.as_ref() != Some(&packet) {
                group.clear();
            }
            targets.clear();
            self.resolve(src, requester, peer, &mut targets);
            for &t in &targets {
                if group.contains(&t) {
                    continue;
                }
                group.push(t);
                self.transmit(src, t, packet.clone(), send_at);
            }
            prev = Some(packet);
        }
    }

    fn jitter(&mut self, j: Jitter) -> u64 {
        match j {
            Jitter::None => 0,
            Jitter::Uniform { max_us } => self.rng.random_range(0..=max_us),
            Jitter::Exponential { mean_us } => {
                let u: f64 = self.rng.random();
                (-(mean_us as f64) * (1.0 - u).ln()) as u64
            }
        }
    }

    fn transmit(&mut self, from: usize, to: usize, packet: Packet, send_at: Duration) {
        let link = self.links[from * self.nodes.len() + to];
        self.conservation.sent += 1;
        self.record(EventKind::Send, Some(from), Some(to), Some(&packet));
        if link.drop_prob > 0.0 && self.rng.random_bool(link.drop_prob) {
            self.conservation.dropped += 1;
            self.record(EventKind::Drop, Some(from), Some(to), Some(&packet));
            return;
        }
        let copies = if link.dup_prob > 0.0 && self.rng.random_bool(link.dup_prob) {
            self.conservation.duplicated += 1;
            self.record(EventKind::Duplicate, Some(from), Some(to), Some(&packet));
            2
        } else {
            1
        };
        for _ in 0..copies {
            let delay = link.base_latency_us + self.jitter(link.jitter);
            let at = send_at + Duration::from_micros(delay);
            self.push(at, EventBody::Arrive { from, to, packet: packet.clone() });
        }
    }

    fn apply_fault(&mut self, f: FaultEvent) {
        if self.cfg.record_trace {
            self.events.push(TraceEvent {
                t_us: self.now.as_micros() as u64,
                kind: EventKind::Fault,
                from: None,
                to: Some(f.target),
                packet: None,
                fault: Some(f.clone()),
            });
        }
        let i = self.index[&f.target];
        match f.action {
            FaultAction::KillRole => self.nodes[i].alive = false,
            FaultAction::ReviveRole => {
                self.nodes[i].alive = true;
                self.nodes[i].busy_until = self.now;
                if let Node::Acceptor(a) = &mut self.nodes[i].node {
                    a.reset();
                }
                self.schedule_wake(i);
            }
            FaultAction::StartBackupCoordinator { start_inst } => {
                if let Node::Coordinator(c) = &mut self.nodes[i].node {
                    c.activate(start_inst);
                    self.nodes[i].alive = true;
                    self.coordinator = i;
                }
            }
            FaultAction::Trim { inst } => {
                let mut out = Outbox::new();
                self.nodes[i].node.on_packet(self.now, Packet::Trim(inst), &mut out);
            }
        }
    }

    /// Snapshot of the log and counters so far.
    pub fn trace(&self) -> SimTrace {
        let roles = self
            .nodes
            .iter()
            .map(|n| {
                let mut received = BTreeMap::new();
                for t in MsgType::ALL {
                    if n.received[t as usize] > 0 {
                        received.insert(t.name().to_string(), n.received[t as usize]);
                    }
                }
                if n.received_replies > 0 {
                    received.insert("reply".into(), n.received_replies);
                }
                if n.received_trims > 0 {
                    received.insert("trim".into(), n.received_trims);
                }
                RoleSummary { id: n.id, alive: n.alive, received, counters: n.node.counters() }
            })
            .collect();
        let in_flight =
            self.queue.iter().filter(|Reverse(s)| matches!(s.body, EventBody::Arrive { .. })).count() as u64;
        SimTrace {
            end_time_us: self.now.as_micros() as u64,
            events: self.events.clone(),
            roles,
            conservation: Conservation { in_flight, ..self.conservation },
        }
    }

    /// Consumes the simulation, moving the event log out without copying.
    pub fn into_trace(mut self) -> SimTrace {
        let events = std::mem::take(&mut self.events);
        SimTrace { events, ..self.trace() }
    }

    pub fn node(&self, id: RoleId) -> Option<&Node> {
        self.index.get(&id).map(|&i| &self.nodes[i].node)
    }

    pub fn learner(&self, index: u16) -> Option<&LearnerNode> {
        match self.node(RoleId::learner(index)) {
            Some(Node::Learner(l)) => Some(l),
            _ => None,
        }
    }

    pub fn client(&self, index: u16) -> Option<&ClientNode> {
        match self.node(RoleId::proposer(index)) {
            Some(Node::Client(c)) => Some(c),
            _ => None,
        }
    }

    pub fn coordinator(&self, index: u16) -> Option<&CoordinatorNode> {
        match self.node(RoleId::coordinator(index)) {
            Some(Node::Coordinator(c)) => Some(c),
            _ => None,
        }
    }

    pub fn acceptor(&self, index: u16) -> Option<&AcceptorNode> {
        match self.node(RoleId::acceptor(index)) {
            Some(Node::Acceptor(a)) => Some(a),
            _ => None,
        }
    }

    /// Mutable learner access, e.g. to start a recovery by hand.
    pub fn learner_mut(&mut self, index: u16) -> Option<&mut LearnerNode> {
        let i = *self.index.get(&RoleId::learner(index))?;
        match &mut self.nodes[i].node {
            Node::Learner(l) => Some(l),
            _ => None,
        }
    }

    /// Starts a recovery of `inst` at a learner, as its application would.
    pub fn recover_at(&mut self, learner: u16, inst: u32) -> Result<(), crate::client::RecoverError> {
        let i = self.index[&RoleId::learner(learner)];
        let now = self.now;
        let Node::Learner(l) = &mut self.nodes[i].node else { unreachable!() };
        l.recover(inst, now)?;
        let mut out = Outbox::new();
        self.nodes[i].node.on_tick(now, &mut out);
        self.dispatch(i, None, out, now);
        self.schedule_wake(i);
        Ok(())
    }

    /// Instances where two learners delivered different values.
    pub fn agreement_violations(&self) -> Vec<u32> {
        let mut chosen: HashMap<u32, &bytes::Bytes> = HashMap::new();
        let mut bad = Vec::new();
        for &i in &self.learners {
            let Node::Learner(l) = &self.nodes[i].node else { continue };
            for d in l.deliveries() {
                match chosen.get(&d.inst) {
                    Some(v) if **v != d.value => bad.push(d.inst),
                    Some(_) => {}
                    None => {
                        chosen.insert(d.inst, &d.value);
                    }
                }
            }
        }
        bad.sort_unstable();
        bad.dedup();
        bad
    }

    /// VALUE_MISMATCH signals raised by all learners.
    pub fn value_mismatches(&self) -> u64 {
        self.learners
            .iter()
            .filter_map(|&i| match &self.nodes[i].node {
                Node::Learner(l) => Some(l.learner().tally().mismatches()),
                _ => None,
            })
            .sum()
    }

    /// Inbound Paxos messages of type `t` at role `id`.
    pub fn received(&self, id: RoleId, t: MsgType) -> u64 {
        self.index.get(&id).map_or(0, |&i| self.nodes[i].received[t as usize])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_standard_topology() {
        let sim = Simulation::build(SimConfig::new(Topology::standard())).unwrap();
        assert_eq!(sim.config().topology.quorum(), 2);
        assert_eq!(sim.acceptors.len(), 3);
        assert_eq!(sim.learners.len(), 2);
        assert_eq!(sim.learner(0).unwrap().learner().tally().quorum(), 2);
    }

    #[test]
    fn single_acceptor_quorum() {
        let topo = Topology { f: 0, acceptors: 1, ..Topology::standard() };
        let sim = Simulation::build(SimConfig::new(topo)).unwrap();
        assert_eq!(sim.learner(0).unwrap().learner().tally().quorum(), 1);
    }

    #[test]
    fn rejects_bad_topologies() {
        let topo = Topology { acceptors: 4, ..Topology::standard() };
        assert!(matches!(Simulation::build(SimConfig::new(topo)), Err(SimError::BadTopology(_))));

        let mut cfg = SimConfig::new(Topology::standard());
        cfg.links.overrides.push(LinkOverride {
            src: RoleId::acceptor(0),
            dst: RoleId::learner(7),
            params: LinkParams::default(),
        });
        assert!(matches!(Simulation::build(cfg), Err(SimError::BadTopology(_))));

        let mut cfg = SimConfig::new(Topology::standard());
        cfg.links.default.drop_prob = 1.5;
        assert!(Simulation::build(cfg).is_err());
    }

    #[test]
    fn inject_rejects_past_faults() {
        let mut cfg = SimConfig::new(Topology::standard());
        cfg.workload.messages = 5;
        let mut sim = Simulation::build(cfg).unwrap();
        sim.run(Until::Time(Duration::from_millis(1)));
        let err = sim.inject(FaultEvent::new(10, FaultAction::KillRole, RoleId::acceptor(0))).unwrap_err();
        assert!(matches!(err, SimError::PastTime { .. }));
    }

    #[test]
    fn config_json_round_trip() {
        let mut cfg = SimConfig::new(Topology::standard());
        cfg.faults.push(FaultEvent::new(
            5,
            FaultAction::StartBackupCoordinator { start_inst: 3 },
            RoleId::coordinator(0),
        ));
        cfg.links.default.jitter = Jitter::Uniform { max_us: 20 };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(SimConfig::from_json(&text).unwrap(), cfg);
    }
}
