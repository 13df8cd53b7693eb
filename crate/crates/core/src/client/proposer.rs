use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use bytes::Bytes;
use thiserror::Error;

use super::envelope::{Envelope, MAX_PAYLOAD_LEN};
use crate::wire::{MsgType, PaxosMessage};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubmitError {
    #[error("value must not be empty")]
    EmptyValue,
    #[error("value of {0} bytes exceeds the {MAX_PAYLOAD_LEN}-byte limit")]
    ValueTooLarge(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecoverError {
    #[error("no-op value must not be empty")]
    EmptyNoop,
    #[error("no-op value of {0} bytes is too large")]
    NoopTooLarge(usize),
    #[error("instance {0} is already being recovered")]
    AlreadyRecovering(u32),
    #[error("recovery timed out without a quorum of replies")]
    Timeout,
    #[error("no recovery round left for this proposer")]
    RoundExhausted,
}

#[derive(Debug, Clone)]
pub struct ProposerConfig {
    /// Also used as the proposer's `swid`.
    pub client_id: u64,
    /// Position of this proposer in the shared recovery round space.
    pub proposer_index: u16,
    /// Number of proposers sharing the round space.
    pub max_proposers: u16,
    /// Number of acceptors (2f+1).
    pub acceptors: usize,
    pub retransmit_timeout: Duration,
    pub max_retries: u32,
}

impl ProposerConfig {
    pub fn quorum(&self) -> usize {
        self.acceptors / 2 + 1
    }

    /// Round used by recovery attempt `attempt`. Round 0 belongs to the
    /// coordinator; proposer `i` of `P` owns rounds `i + 1 + k*P`.
    pub fn recovery_round(&self, attempt: u32) -> Option<u16> {
        let r = u64::from(attempt) * u64::from(self.max_proposers.max(1)) + u64::from(self.proposer_index) + 1;
        u16::try_from(r).ok()
    }

    /// First attempt whose round exceeds `floor`.
    pub fn attempt_above(&self, floor: u16) -> u32 {
        let base = u32::from(self.proposer_index) + 1;
        let floor = u32::from(floor);
        if floor < base {
            0
        } else {
            (floor - base) / u32::from(self.max_proposers.max(1)) + 1
        }
    }
}

/// Something the proposer wants put on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outgoing {
    Coordinator(PaxosMessage),
    Acceptors(PaxosMessage),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RequestHandle {
    pub req_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProposerEvent {
    /// A submission ran out of retries.
    Failed {
        req_seq: u64,
    },
    /// A recovery reached a quorum of Phase 2B votes for `value`.
    Recovered {
        inst: u32,
        value: Bytes,
        noop: bool,
    },
    RecoverFailed {
        inst: u32,
        error: RecoverError,
    },
}

#[derive(Debug)]
struct Pending {
    value: Bytes,
    submitted_at: Duration,
    deadline: Duration,
    retries: u32,
}

#[derive(Debug)]
enum Phase {
    Prepare { promises: BTreeMap<u64, (u16, Bytes)> },
    Accept { value: Bytes, voters: BTreeSet<u64> },
}

#[derive(Debug)]
struct Recovery {
    noop: Bytes,
    attempt: u32,
    tries: u32,
    rnd: u16,
    phase: Phase,
    deadline: Duration,
}

/// Client side of the consensus API: submission with retransmission, and
/// recovery of individual instances through a full Phase 1 + Phase 2 run.
///
/// The proposer never touches a socket. Callers pass the current time and
/// collect [`Outgoing`] messages and [`ProposerEvent`]s.
#[derive(Debug)]
pub struct Proposer {
    cfg: ProposerConfig,
    next_req_seq: u64,
    pending: BTreeMap<u64, Pending>,
    recoveries: BTreeMap<u32, Recovery>,
    /// Highest round seen per instance, so a new recovery starts above any
    /// promise an acceptor may already hold.
    seen_rounds: BTreeMap<u32, u16>,
    events: Vec<ProposerEvent>,
    retransmissions: u64,
}

impl Proposer {
    pub fn new(cfg: ProposerConfig) -> Self {
        Proposer {
            cfg,
            next_req_seq: 0,
            pending: BTreeMap::new(),
            recoveries: BTreeMap::new(),
            seen_rounds: BTreeMap::new(),
            events: Vec::new(),
            retransmissions: 0,
        }
    }

    pub fn config(&self) -> &ProposerConfig {
        &self.cfg
    }

    pub fn client_id(&self) -> u64 {
        self.cfg.client_id
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn retransmissions(&self) -> u64 {
        self.retransmissions
    }

    pub fn is_recovering(&self, inst: u32) -> bool {
        self.recoveries.contains_key(&inst)
    }

    pub fn active_recoveries(&self) -> usize {
        self.recoveries.len()
    }

    /// Wraps `value` in a client envelope and sends it to the coordinator.
    pub fn submit(
        &mut self,
        value: &[u8],
        now: Duration,
        out: &mut Vec<Outgoing>,
    ) -> Result<RequestHandle, SubmitError> {
        if value.is_empty() {
            return Err(SubmitError::EmptyValue);
        }
        if value.len() > MAX_PAYLOAD_LEN {
            return Err(SubmitError::ValueTooLarge(value.len()));
        }
        let req_seq = self.next_req_seq;
        self.next_req_seq += 1;
        let value = Envelope::new(self.cfg.client_id, req_seq, Bytes::copy_from_slice(value)).encode();
        out.push(Outgoing::Coordinator(PaxosMessage::request(self.cfg.client_id, value.clone())));
        self.pending.insert(
            req_seq,
            Pending { value, submitted_at: now, deadline: now + self.cfg.retransmit_timeout, retries: 0 },
        );
        Ok(RequestHandle { req_seq })
    }

    /// Marks a submission as delivered. Returns its original submit time, or
    /// `None` if it was not pending (already resolved or failed).
    pub fn resolve(&mut self, req_seq: u64) -> Option<Duration> {
        self.pending.remove(&req_seq).map(|p| p.submitted_at)
    }

    /// Starts a recovery of `inst`, proposing `noop` if no value was chosen.
    pub fn recover(
        &mut self,
        inst: u32,
        noop: &[u8],
        now: Duration,
        out: &mut Vec<Outgoing>,
    ) -> Result<(), RecoverError> {
        if noop.is_empty() {
            return Err(RecoverError::EmptyNoop);
        }
        if noop.len() > crate::wire::MAX_VALUE_LEN {
            return Err(RecoverError::NoopTooLarge(noop.len()));
        }
        if self.recoveries.contains_key(&inst) {
            return Err(RecoverError::AlreadyRecovering(inst));
        }
        let attempt = self.attempt_for(inst, 0);
        let rnd = self.cfg.recovery_round(attempt).ok_or(RecoverError::RoundExhausted)?;
        self.note_round(inst, rnd);
        let rec = Recovery {
            noop: Bytes::copy_from_slice(noop),
            attempt,
            tries: 0,
            rnd,
            phase: Phase::Prepare { promises: BTreeMap::new() },
            deadline: now + self.cfg.retransmit_timeout,
        };
        out.push(Outgoing::Acceptors(self.prepare(inst, rnd)));
        self.recoveries.insert(inst, rec);
        Ok(())
    }

    /// Stops recovering `inst` without reporting an outcome, e.g. because
    /// the caller learned the instance some other way.
    pub fn cancel_recovery(&mut self, inst: u32) -> bool {
        self.recoveries.remove(&inst).is_some()
    }

    /// Drops round history for instances below `inst`.
    pub fn forget_below(&mut self, inst: u32) {
        self.seen_rounds = self.seen_rounds.split_off(&inst);
    }

    fn note_round(&mut self, inst: u32, rnd: u16) {
        if rnd > 0 {
            let r = self.seen_rounds.entry(inst).or_insert(0);
            *r = (*r).max(rnd);
        }
    }

    fn attempt_for(&self, inst: u32, at_least: u32) -> u32 {
        let floor = self.seen_rounds.get(&inst).copied().unwrap_or(0);
        self.cfg.attempt_above(floor).max(at_least)
    }

    fn prepare(&self, inst: u32, rnd: u16) -> PaxosMessage {
        PaxosMessage::new(MsgType::Phase1a, inst, rnd, self.cfg.client_id, Bytes::new())
    }

    /// Feeds acceptor replies (Phase 1B / 2B) to any matching recovery.
    pub fn handle(&mut self, msg: &PaxosMessage, now: Duration, out: &mut Vec<Outgoing>) {
        let quorum = self.cfg.quorum();
        if matches!(msg.msgtype, MsgType::Phase1b | MsgType::Phase2b) {
            self.note_round(msg.inst, msg.rnd);
        }
        let Some(rec) = self.recoveries.get_mut(&msg.inst) else {
            return;
        };
        if msg.rnd != rec.rnd {
            return;
        }
        match (&mut rec.phase, msg.msgtype) {
            (Phase::Prepare { promises }, MsgType::Phase1b) => {
                promises.insert(msg.swid, (msg.vrnd, msg.value.clone()));
                if promises.len() < quorum {
                    return;
                }
                // highest-round vote wins; ties go to the lowest swid
                let mut best: Option<(u16, &Bytes)> = None;
                for (vrnd, value) in promises.values() {
                    if value.is_empty() {
                        continue;
                    }
                    if best.is_none_or(|(b, _)| *vrnd > b) {
                        best = Some((*vrnd, value));
                    }
                }
                let value = best.map_or_else(|| rec.noop.clone(), |(_, v)| v.clone());
                out.push(Outgoing::Acceptors(PaxosMessage::new(
                    MsgType::Phase2a,
                    msg.inst,
                    rec.rnd,
                    self.cfg.client_id,
                    value.clone(),
                )));
                rec.phase = Phase::Accept { value, voters: BTreeSet::new() };
                rec.deadline = now + self.cfg.retransmit_timeout;
            }
            (Phase::Accept { value, voters }, MsgType::Phase2b) => {
                if msg.value != *value {
                    return;
                }
                voters.insert(msg.swid);
                if voters.len() >= quorum {
                    let noop = *value == rec.noop;
                    let value = value.clone();
                    self.recoveries.remove(&msg.inst);
                    self.events.push(ProposerEvent::Recovered { inst: msg.inst, value, noop });
                }
            }
            _ => {}
        }
    }

    /// Retransmits expired submissions and restarts expired recoveries at a
    /// higher round.
    pub fn poll_timeouts(&mut self, now: Duration, out: &mut Vec<Outgoing>) {
        let timeout = self.cfg.retransmit_timeout;
        let mut failed = Vec::new();
        for (&req_seq, p) in self.pending.iter_mut() {
            if p.deadline > now {
                continue;
            }
            if p.retries >= self.cfg.max_retries {
                failed.push(req_seq);
                continue;
            }
            p.retries += 1;
            p.deadline = now + timeout;
            self.retransmissions += 1;
            out.push(Outgoing::Coordinator(PaxosMessage::request(self.cfg.client_id, p.value.clone())));
        }
        for req_seq in failed {
            self.pending.remove(&req_seq);
            self.events.push(ProposerEvent::Failed { req_seq });
        }

        let mut finished = Vec::new();
        let expired: Vec<u32> = self.recoveries.iter().filter(|(_, r)| r.deadline <= now).map(|(&i, _)| i).collect();
        for inst in expired {
            let attempt = self.attempt_for(inst, self.recoveries[&inst].attempt + 1);
            let rec = self.recoveries.get_mut(&inst).unwrap();
            rec.tries += 1;
            if rec.tries > self.cfg.max_retries {
                finished.push((inst, RecoverError::Timeout));
                continue;
            }
            rec.attempt = attempt;
            let Some(rnd) = self.cfg.recovery_round(rec.attempt) else {
                finished.push((inst, RecoverError::RoundExhausted));
                continue;
            };
            rec.rnd = rnd;
            rec.phase = Phase::Prepare { promises: BTreeMap::new() };
            rec.deadline = now + timeout;
            out.push(Outgoing::Acceptors(PaxosMessage::new(
                MsgType::Phase1a,
                inst,
                rnd,
                self.cfg.client_id,
                Bytes::new(),
            )));
            self.note_round(inst, rnd);
        }
        for (inst, error) in finished {
            self.recoveries.remove(&inst);
            self.events.push(ProposerEvent::RecoverFailed { inst, error });
        }
    }

    /// Earliest time `poll_timeouts` has work to do.
    pub fn next_deadline(&self) -> Option<Duration> {
        let p = self.pending.values().map(|p| p.deadline).min();
        let r = self.recoveries.values().map(|r| r.deadline).min();
        match (p, r) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn drain_events(&mut self) -> Vec<ProposerEvent> {
        std::mem::take(&mut self.events)
    }
}
