//! Checks shared by the topic tests and the acceptance runner. Each check
//! returns `Ok(detail)` or `Err(detail)` instead of panicking, so the
//! acceptance runner can report every criterion.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::net::UdpSocket;
use std::time::{Duration, Instant};

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use caans::apps::AppKind;
use caans::client::{Outgoing, Proposer, ProposerConfig, ProposerEvent};
use caans::dataplane::{AcceptorState, DropReason};
use caans::node::Workload;
use caans::runtime::{run_client, spawn_deployment, ClientOptions, DeploymentConfig};
use caans::simnet::{FaultAction, FaultEvent, Jitter, RoleId, SimConfig, Simulation, Topology, Until};
use caans::wire::{self, MsgType, PaxosMessage, MAX_VALUE_LEN};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

pub fn standard(messages: u64, seed: u64) -> SimConfig {
    let mut cfg = SimConfig::new(Topology::standard());
    cfg.workload.messages = messages;
    cfg.seed = seed;
    cfg
}

pub fn run(cfg: SimConfig) -> Simulation {
    let mut sim = Simulation::build(cfg).expect("valid config");
    sim.run(Until::Quiescence);
    sim
}

// ---------------------------------------------------------------- safety

/// Lossy, duplicating, reordering runs; no two learners may deliver
/// different values for one instance.
pub fn safety_suite(runs: u64, messages: u64) -> Check {
    let mut incomplete = 0;
    let mut instances = 0;
    for seed in 0..runs {
        let mut cfg = standard(messages, seed);
        cfg.workload.concurrency = 4;
        cfg.links.default.drop_prob = 0.10;
        cfg.links.default.dup_prob = 0.05;
        cfg.links.default.jitter = Jitter::Uniform { max_us: 100 };
        let sim = run(cfg);
        let violations = sim.agreement_violations();
        ensure!(violations.is_empty(), "seed {seed}: learners disagree on {violations:?}");
        let mismatches = sim.value_mismatches();
        ensure!(mismatches == 0, "seed {seed}: {mismatches} value mismatches");
        let c = sim.client(0).unwrap();
        if c.completed() != messages {
            incomplete += 1;
        }
        instances += sim.learner(0).unwrap().deliveries().len();
    }
    Ok(format!(
        "{runs} runs, {instances} instances delivered, 0 violations, 0 mismatches, {incomplete} runs with client give-ups"
    ))
}

// ------------------------------------------------------------ vote rule

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Prepare(u16),
    Accept(u16, u8),
}

pub const ALPHABET: [Step; 6] = [
    Step::Prepare(0),
    Step::Prepare(1),
    Step::Accept(0, b'a'),
    Step::Accept(0, b'b'),
    Step::Accept(1, b'a'),
    Step::Accept(1, b'b'),
];

/// What an acceptor answers to one step: `None` for silence, otherwise
/// (type, rnd, vrnd, value).
pub type Answer = Option<(MsgType, u16, u16, Vec<u8>)>;

/// Reference evaluator written directly over the history: step `k` is acted
/// on iff its round is at least every earlier acted-on round and, for an
/// accept, no earlier acted-on accept has a round at or above it.
pub fn reference(history: &[Step]) -> Vec<Answer> {
    let mut acted: Vec<bool> = Vec::new();
    let mut answers = Vec::new();
    for (k, step) in history.iter().enumerate() {
        let earlier = || history[..k].iter().zip(&acted).filter(|(_, a)| **a).map(|(s, _)| *s);
        let round = |s: Step| match s {
            Step::Prepare(r) | Step::Accept(r, _) => r,
        };
        let r = round(*step);
        let promised_ok = earlier().all(|s| round(s) <= r);
        let last_vote = earlier()
            .filter_map(|s| match s {
                Step::Accept(r, v) => Some((r, v)),
                Step::Prepare(_) => None,
            })
            .next_back();
        let ok = match step {
            Step::Prepare(_) => promised_ok,
            Step::Accept(..) => promised_ok && last_vote.is_none_or(|(vr, _)| vr < r),
        };
        acted.push(ok);
        answers.push(ok.then(|| match *step {
            Step::Prepare(r) => match last_vote {
                Some((vr, v)) => (MsgType::Phase1b, r, vr, vec![v]),
                None => (MsgType::Phase1b, r, 0, Vec::new()),
            },
            Step::Accept(r, v) => (MsgType::Phase2b, r, r, vec![v]),
        }));
    }
    answers
}

fn implementation(history: &[Step]) -> Vec<Answer> {
    let mut a = AcceptorState::new(9, 4);
    history
        .iter()
        .map(|s| {
            let msg = match *s {
                Step::Prepare(r) => PaxosMessage::new(MsgType::Phase1a, 0, r, 1, Bytes::new()),
                Step::Accept(r, v) => PaxosMessage::new(MsgType::Phase2a, 0, r, 1, vec![v]),
            };
            a.process(msg).map(|e| (e.msg.msgtype, e.msg.rnd, e.msg.vrnd, e.msg.value.to_vec()))
        })
        .collect()
}

/// Every sequence over the six-message alphabet up to `max_len` long.
pub fn vote_rule_exhaustive(max_len: usize) -> Check {
    let mut checked = 0u64;
    let mut history = Vec::with_capacity(max_len);
    fn walk(history: &mut Vec<Step>, max_len: usize, checked: &mut u64) -> Result<(), String> {
        if !history.is_empty() {
            *checked += 1;
            let want = reference(history);
            let got = implementation(history);
            if want != got {
                return Err(format!("{history:?}: expected {want:?}, got {got:?}"));
            }
        }
        if history.len() == max_len {
            return Ok(());
        }
        for s in ALPHABET {
            history.push(s);
            walk(history, max_len, checked)?;
            history.pop();
        }
        Ok(())
    }
    walk(&mut history, max_len, &mut checked)?;
    Ok(format!("{checked} interleavings agree with the reference evaluator"))
}

// -------------------------------------------------------------- recover

const INST: u32 = 7;
const NOOP: &[u8] = b"noop";

struct VoteLog {
    // (acceptor, rnd, value)
    votes: Vec<(usize, u16, Bytes)>,
}

impl VoteLog {
    fn chosen(&self, quorum: usize) -> BTreeSet<Bytes> {
        let mut by_round: BTreeMap<(u16, Bytes), BTreeSet<usize>> = BTreeMap::new();
        for (a, r, v) in &self.votes {
            by_round.entry((*r, v.clone())).or_default().insert(*a);
        }
        by_round.into_iter().filter(|(_, who)| who.len() >= quorum).map(|((_, v), _)| v).collect()
    }

    /// Highest-round vote cast by any acceptor in `q`.
    fn highest_in(&self, q: &[usize]) -> Option<(u16, Bytes)> {
        self.votes.iter().filter(|(a, ..)| q.contains(a)).max_by_key(|(_, r, _)| *r).map(|(_, r, v)| (*r, v.clone()))
    }
}

fn send(acceptors: &mut [AcceptorState], to: usize, msg: PaxosMessage, log: &mut VoteLog) -> Option<PaxosMessage> {
    let out = acceptors[to].process(msg)?.msg;
    if out.msgtype == MsgType::Phase2b {
        log.votes.push((to, out.rnd, out.value.clone()));
    }
    Some(out)
}

/// Builds a random but protocol-conforming vote history for `INST`: the
/// coordinator's round-0 accept reaching a random subset, followed by
/// foreign proposers (even rounds) that complete Phase 1 with a random
/// subset and then accept at a random subset.
fn random_history(rng: &mut ChaCha8Rng, acceptors: &mut [AcceptorState], log: &mut VoteLog) {
    let n = acceptors.len();
    let quorum = n / 2 + 1;
    let subset = |rng: &mut ChaCha8Rng| -> Vec<usize> { (0..n).filter(|_| rng.random_bool(0.5)).collect() };
    if rng.random_bool(0.7) {
        for a in subset(rng) {
            send(acceptors, a, PaxosMessage::new(MsgType::Phase2a, INST, 0, 1, &b"coord"[..]), log);
        }
    }
    let mut rnd = 0u16;
    for p in 0..rng.random_range(0..4u32) {
        rnd += 2 * rng.random_range(1..3u16);
        let mut promises = Vec::new();
        for a in subset(rng) {
            let prepare = PaxosMessage::new(MsgType::Phase1a, INST, rnd, 2, Bytes::new());
            if let Some(m) = send(acceptors, a, prepare, log) {
                promises.push(m);
            }
        }
        if promises.len() < quorum {
            continue;
        }
        let value = promises
            .iter()
            .filter(|m| !m.value.is_empty())
            .max_by_key(|m| m.vrnd)
            .map_or_else(|| Bytes::from(format!("foreign{p}")), |m| m.value.clone());
        for a in subset(rng) {
            send(acceptors, a, PaxosMessage::new(MsgType::Phase2a, INST, rnd, 2, value.clone()), log);
        }
    }
}

/// Runs a recovery of `inst` against the acceptors in `reachable`, which
/// answer in a shuffled order. Returns the recovered value.
fn drive_recovery(
    rng: &mut ChaCha8Rng,
    acceptors: &mut [AcceptorState],
    reachable: &[usize],
    inst: u32,
    log: &mut VoteLog,
) -> Result<Bytes, String> {
    let cfg = ProposerConfig {
        client_id: 0xAB,
        proposer_index: 0,
        max_proposers: 2,
        acceptors: acceptors.len(),
        retransmit_timeout: Duration::from_millis(1),
        max_retries: 64,
    };
    let mut p = Proposer::new(cfg);
    let mut now = Duration::ZERO;
    let mut out = Vec::new();
    p.recover(inst, NOOP, now, &mut out).map_err(|e| e.to_string())?;
    for _ in 0..200 {
        while let Some(o) = out.pop() {
            let Outgoing::Acceptors(msg) = o else {
                return Err("recovery talked to the coordinator".into());
            };
            let mut order = reachable.to_vec();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let mut replies = Vec::new();
            for a in order {
                replies.extend(send(acceptors, a, msg.clone(), log));
            }
            for r in replies {
                p.handle(&r, now, &mut out);
            }
        }
        for e in p.drain_events() {
            match e {
                ProposerEvent::Recovered { value, .. } => return Ok(value),
                ProposerEvent::RecoverFailed { error, .. } => return Err(error.to_string()),
                ProposerEvent::Failed { .. } => {}
            }
        }
        now += Duration::from_millis(2);
        p.poll_timeouts(now, &mut out);
    }
    Err("recovery did not finish".into())
}

/// Random histories, then `recover(k, noop)` through a quorum; the result
/// must be what the vote logs dictate: the chosen value if there is one,
/// else the highest-round vote the answering quorum holds, else the no-op.
pub fn recover_oracle(schedules: u64, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outcomes: BTreeMap<&str, u64> = BTreeMap::new();
    for s in 0..schedules {
        let mut acceptors: Vec<AcceptorState> = (0..3).map(|i| AcceptorState::new(0x2000 + i, 16)).collect();
        let mut log = VoteLog { votes: Vec::new() };
        random_history(&mut rng, &mut acceptors, &mut log);
        let chosen = log.chosen(2);
        ensure!(chosen.len() <= 1, "schedule {s}: history chose {chosen:?}");
        let down = rng.random_range(0..3usize);
        let quorum: Vec<usize> = (0..3).filter(|a| *a != down).collect();
        let expected = match (chosen.first(), log.highest_in(&quorum)) {
            (Some(v), _) => {
                *outcomes.entry("chosen").or_default() += 1;
                v.clone()
            }
            (None, Some((_, v))) => {
                *outcomes.entry("highest vote").or_default() += 1;
                v
            }
            (None, None) => {
                *outcomes.entry("noop").or_default() += 1;
                Bytes::from_static(NOOP)
            }
        };
        let before = log.votes.len();
        let got = drive_recovery(&mut rng, &mut acceptors, &quorum, INST, &mut log)
            .map_err(|e| format!("schedule {s}: {e}"))?;
        ensure!(got == expected, "schedule {s}: recovered {got:?}, oracle says {expected:?}");
        ensure!(log.votes.len() > before, "schedule {s}: recovery cast no votes");

        let fresh = drive_recovery(&mut rng, &mut acceptors, &quorum, INST + 1, &mut log)
            .map_err(|e| format!("schedule {s}, fresh instance: {e}"))?;
        ensure!(&fresh[..] == NOOP, "schedule {s}: fresh instance recovered {fresh:?}");
    }
    Ok(format!("{schedules} schedules match the vote-log oracle {outcomes:?}; fresh instances gave no-op"))
}

// ------------------------------------------------------------- failover

/// Kills the primary at 10ms and starts the backup at 30ms, `offset`
/// instances away from where the primary stopped.
pub fn failover(offset: i64, seed: u64) -> Simulation {
    let mut topo = Topology::standard();
    topo.backup_coordinator = true;
    let mut cfg = SimConfig::new(topo);
    cfg.seed = seed;
    cfg.workload.messages = 300;
    cfg.workload.concurrency = 4;
    cfg.timing.tail_probe = false;
    cfg.faults.push(FaultEvent::new(10_000, FaultAction::KillRole, RoleId::coordinator(0)));
    let mut sim = Simulation::build(cfg).unwrap();
    sim.run(Until::Time(Duration::from_millis(30)));
    let reached = sim.coordinator(0).unwrap().state().next_inst().unwrap();
    let start_inst = (i64::from(reached) + offset) as u32;
    sim.inject(FaultEvent::new(30_000, FaultAction::StartBackupCoordinator { start_inst }, RoleId::coordinator(1)))
        .unwrap();
    sim.run(Until::Quiescence);
    sim
}

pub fn exactly_once(sim: &Simulation, messages: u64) -> Result<(), String> {
    let c = sim.client(0).unwrap();
    ensure!(
        (c.completed(), c.failed()) == (messages, 0),
        "client completed {} and gave up on {}",
        c.completed(),
        c.failed()
    );
    for l in 0..2 {
        let applied = sim.learner(l).unwrap().replica().applied();
        let mut seqs: Vec<u64> = applied.iter().map(|a| a.req_seq).collect();
        seqs.sort_unstable();
        ensure!(
            seqs == (0..messages).collect::<Vec<_>>(),
            "learner {l} applied {} requests, not each of 0..{messages} once",
            seqs.len()
        );
    }
    ensure!(sim.agreement_violations().is_empty(), "agreement violated");
    Ok(())
}

/// Latest delivery time before and earliest after the outage window.
fn resumed(sim: &Simulation) -> (Duration, Duration) {
    let d = sim.learner(0).unwrap().deliveries();
    let before = d.iter().map(|r| r.time).filter(|t| *t < Duration::from_millis(10)).max();
    let after = d.iter().map(|r| r.time).filter(|t| *t >= Duration::from_millis(30)).min();
    (before.unwrap_or_default(), after.unwrap_or(Duration::MAX))
}

pub fn failover_under(seed: u64) -> Check {
    let sim = failover(-10, seed);
    exactly_once(&sim, 300)?;
    let worst = *sim.client(0).unwrap().latencies().iter().max().unwrap();
    let rto = sim.config().timing.retransmit_timeout();
    ensure!(worst > rto, "no stall: worst latency {worst:?} <= retransmit timeout {rto:?}");
    let refused: u64 =
        (0..3).map(|a| sim.acceptor(a).unwrap().state().metrics().dropped(DropReason::AlreadyVoted)).sum();
    ensure!(refused > 0, "acceptors refused no re-issued instance");
    let noops = sim.learner(0).unwrap().replica().noops();
    ensure!(noops == 0, "{noops} no-ops without a gap");
    let (last, first) = resumed(&sim);
    ensure!(first != Duration::MAX, "delivery never resumed");
    Ok(format!(
        "300/300 exactly once; {refused} 2A refused as already voted, worst latency {worst:?}; deliveries stop at {last:?}, resume at {first:?}"
    ))
}

pub fn failover_over(seed: u64) -> Check {
    let sim = failover(200, seed);
    exactly_once(&sim, 300)?;
    for l in 0..2 {
        let noops = sim.learner(l).unwrap().replica().noops();
        ensure!(noops == 200, "learner {l} closed {noops} gap instances, expected 200");
    }
    let recovered = sim.learner(0).unwrap().recovered() + sim.learner(1).unwrap().recovered();
    ensure!(recovered >= 200, "only {recovered} recoveries");
    let (last, first) = resumed(&sim);
    ensure!(first != Duration::MAX, "delivery never resumed");
    Ok(format!(
        "300/300 exactly once; 200-instance gap closed by no-ops ({recovered} recoveries); deliveries stop at {last:?}, resume at {first:?}"
    ))
}

// ---------------------------------------------------- acceptor failure

pub fn acceptor_failure(seed: u64) -> Check {
    let mut cfg = standard(200, seed);
    cfg.timing.tail_probe = false;
    cfg.workload.concurrency = 2;
    cfg.faults.push(FaultEvent::new(5_000, FaultAction::KillRole, RoleId::acceptor(0)));
    let mut sim = Simulation::build(cfg).unwrap();
    sim.run(Until::Time(Duration::from_micros(5_000)));
    let submitted_before = sim.client(0).unwrap().submitted();
    let mut rates = Vec::new();
    let mut snapshot = Vec::new();
    for l in 0..2 {
        let d = sim.learner(l).unwrap().deliveries().len() as u64;
        let v = sim.received(RoleId::learner(l), MsgType::Phase2b);
        rates.push(v as f64 / d as f64);
        snapshot.push((d, v));
    }
    sim.run(Until::Quiescence);
    let c = sim.client(0).unwrap();
    ensure!(c.completed() == 200 && c.failed() == 0, "completed {} of 200", c.completed());
    let mut after = Vec::new();
    for l in 0..2 {
        let (d0, v0) = snapshot[l as usize];
        let d = sim.learner(l).unwrap().deliveries().len() as u64 - d0;
        let v = sim.received(RoleId::learner(l), MsgType::Phase2b) - v0;
        ensure!(d > 0, "learner {l} delivered nothing after the fault");
        ensure!(v == 2 * d, "learner {l}: {v} votes for {d} instances after the fault");
        after.push(v as f64 / d as f64);
    }
    ensure!(rates.iter().all(|r| *r == 3.0), "pre-fault 2B rate {rates:?}");
    Ok(format!(
        "{} submissions after the fault all delivered; 2B per instance {rates:?} -> {after:?}",
        200 - submitted_before
    ))
}

// ----------------------------------------------------------------- wire

fn random_message(rng: &mut ChaCha8Rng) -> PaxosMessage {
    let msgtype = MsgType::ALL[rng.random_range(0..MsgType::ALL.len())];
    let min = usize::from(msgtype != MsgType::Phase1b);
    let len = if rng.random_bool(0.1) { MAX_VALUE_LEN } else { rng.random_range(min..=64) };
    let mut value = vec![0u8; len];
    rng.fill(&mut value[..]);
    PaxosMessage {
        msgtype,
        inst: rng.random(),
        rnd: rng.random(),
        vrnd: rng.random(),
        swid: rng.random(),
        value: value.into(),
    }
}

pub fn wire_checks(fuzz: u64, seed: u64) -> Check {
    let m = PaxosMessage::new(MsgType::Phase2a, 1, 0, 1, vec![7u8; 16]);
    let encoded = wire::encode(&m).map_err(|e| e.to_string())?;
    ensure!(encoded.len() == 60, "16-byte PHASE_2A encodes to {} bytes", encoded.len());
    let framed = encoded.len() + wire::L2_L4_FRAMING;
    ensure!(framed == 102, "framed size {framed}");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = Vec::new();
    for i in 0..fuzz {
        let m = random_message(&mut rng);
        buf.clear();
        wire::encode_into(&m, &mut buf).map_err(|e| format!("message {i}: {e}"))?;
        ensure!(buf.len() == m.encoded_len(), "message {i}: length {}", buf.len());
        let back = wire::decode(&buf).map_err(|e| format!("message {i}: {e}"))?;
        ensure!(back == m, "message {i}: {m:?} came back as {back:?}");
    }
    Ok(format!("60 B + 42 B framing = {framed} B; {fuzz} fuzzed messages round-trip"))
}

// --------------------------------------------------------- buffer reuse

pub fn buffer_reuse() -> Check {
    let p2a = |inst, v: &'static [u8]| PaxosMessage::new(MsgType::Phase2a, inst, 0, 1, v);
    let p1a = |inst, rnd| PaxosMessage::new(MsgType::Phase1a, inst, rnd, 1, Bytes::new());
    let mut a = AcceptorState::new(0x2000, 8);

    ensure!(a.process(p2a(3, b"a")).is_some(), "instance 3 not accepted");
    ensure!(a.slot(3).is_some_and(|s| s.has_vote), "instance 3 has no vote");
    ensure!(a.process(p2a(11, b"b")).is_some(), "instance 11 not accepted");
    ensure!(a.slot(3).is_none(), "instance 3 still readable after 11 took its slot");
    ensure!(a.slot(11).is_some_and(|s| &s.value[..] == b"b"), "slot 3 does not hold 11");
    ensure!(a.process(p2a(3, b"c")).is_none(), "2A for evicted 3 answered");
    ensure!(a.process(p1a(3, 5)).is_none(), "1A for evicted 3 answered");
    let stale = a.metrics().dropped(DropReason::Stale);
    ensure!(stale == 2, "{stale} stale drops, expected 2");
    // the neighbouring slots are untouched
    ensure!(a.process(p2a(4, b"d")).is_some(), "instance 4 refused");
    ensure!(a.process(p2a(12, b"e")).is_some(), "instance 12 refused");

    a.trim(15);
    ensure!(a.trim_watermark() == 16, "watermark {} after trim(15)", a.trim_watermark());
    ensure!(a.process(p2a(15, b"f")).is_none(), "instance 15 served after trim(15)");
    ensure!(a.process(p2a(16, b"g")).is_some(), "instance 16 refused after trim(15)");
    a.trim(10);
    ensure!(a.trim_watermark() == 16, "lower trim moved the watermark");
    ensure!(a.slot(12).is_none(), "trimmed instance 12 still readable");
    ensure!(a.process(p1a(12, 9)).is_none(), "1A for trimmed 12 answered");
    let stale = a.metrics().dropped(DropReason::Stale);
    ensure!(stale == 4, "{stale} stale drops, expected 4");
    Ok("i+8 evicts i, access to i is stale-dropped; watermark serves exactly inst >= trim+1".into())
}

// ------------------------------------------------------------------ KV

pub fn kv_consistency(runs: u64) -> Check {
    let mut applied = 0;
    for seed in 0..runs {
        let mut cfg = standard(150, seed);
        cfg.app = AppKind::Kv;
        cfg.workload.workload = Workload::KvMixed { value_size: 16, keys: 8 };
        cfg.workload.concurrency = 3;
        cfg.links.default.drop_prob = 0.10;
        cfg.links.default.dup_prob = 0.05;
        let sim = run(cfg);
        let a = sim.learner(0).unwrap().replica();
        let b = sim.learner(1).unwrap().replica();
        let (na, nb) = (a.kv().unwrap().applied_count(), b.kv().unwrap().applied_count());
        ensure!(na == nb, "seed {seed}: replicas applied {na} and {nb} operations");
        ensure!(a.digest() == b.digest(), "seed {seed}: digests differ after {na} operations");
        applied += na;
    }
    Ok(format!("{runs} runs, {applied} operations, identical digests every run"))
}

// ------------------------------------------------------------ throughput

/// Loopback deployment on ports the OS just handed out.
pub fn free_config() -> DeploymentConfig {
    let mut cfg = DeploymentConfig::local(1, 2);
    let holders: Vec<UdpSocket> = (0..7).map(|_| UdpSocket::bind("127.0.0.1:0").unwrap()).collect();
    let mut ports = holders.iter().map(|s| s.local_addr().unwrap());
    cfg.coordinator.listen = ports.next();
    cfg.backup_coordinator.as_mut().unwrap().listen = ports.next();
    for a in &mut cfg.acceptors {
        a.listen = ports.next();
    }
    for l in &mut cfg.learners {
        l.listen = ports.next();
    }
    cfg.timing.retransmit_timeout_us = 100_000;
    cfg
}

pub fn udp_throughput(clients: usize, messages: u64) -> Result<f64, String> {
    let cfg = free_config();
    let roles = spawn_deployment(&cfg).map_err(|e| e.to_string())?;
    let report = run_client(
        &cfg,
        &ClientOptions {
            concurrency: clients,
            messages,
            workload: Workload::Echo { value_size: 64 },
            seed: 1,
            deadline: Duration::from_secs(60),
            keep_replies: false,
        },
    )
    .map_err(|e| e.to_string())?;
    for r in roles {
        r.stop().map_err(|e| e.to_string())?;
    }
    ensure!(report.is_complete(messages), "completed {} of {messages}", report.completed);
    Ok(report.completed as f64 / report.elapsed.as_secs_f64())
}

/// Consensus instances decided per second of wall-clock time.
pub fn sim_throughput(messages: u64) -> Result<f64, String> {
    let mut cfg = standard(messages, 1);
    cfg.workload.concurrency = 8;
    cfg.workload.workload = Workload::Echo { value_size: 64 };
    let started = Instant::now();
    let sim = run(cfg);
    let elapsed = started.elapsed();
    let decided = sim.learner(0).unwrap().deliveries().len();
    ensure!(decided as u64 >= messages, "decided {decided} of {messages}");
    Ok(decided as f64 / elapsed.as_secs_f64())
}
