use std::collections::{BTreeSet, HashMap, HashSet};

use bytes::Bytes;
use thiserror::Error;

use crate::wire::{MsgType, PaxosMessage};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LearnerError {
    #[error("acceptor {swid} voted a different value at instance {inst} round {rnd}")]
    ValueMismatch { inst: u32, rnd: u16, swid: u64 },
}

/// A value reaching a quorum of votes within one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliverEvent {
    pub inst: u32,
    pub rnd: u16,
    pub value: Bytes,
}

#[derive(Debug)]
struct RoundVotes {
    rnd: u16,
    value: Bytes,
    voters: Vec<u64>,
}

#[derive(Debug, Default)]
struct InstanceRecord {
    rounds: Vec<RoundVotes>,
    delivered: Option<(u16, Bytes)>,
    empty_promises: Vec<u64>,
}

/// Per-instance vote bookkeeping. Votes are grouped by round; a value is
/// delivered once `quorum` distinct acceptors voted for it in the same round.
#[derive(Debug)]
pub struct LearnerTally {
    quorum: usize,
    instances: HashMap<u32, InstanceRecord>,
    // every instance below `frontier` is delivered
    frontier: u64,
    delivered_above: BTreeSet<u32>,
    max_delivered: Option<u32>,
    delivered_count: u64,
    recovering: HashSet<u32>,
    mismatches: u64,
}

impl LearnerTally {
    /// Tally for `acceptors` = 2f+1 acceptors (quorum f+1).
    pub fn new(acceptors: usize) -> Self {
        LearnerTally::with_quorum(acceptors / 2 + 1)
    }

    pub fn with_quorum(quorum: usize) -> Self {
        assert!(quorum > 0);
        LearnerTally {
            quorum,
            instances: HashMap::new(),
            frontier: 0,
            delivered_above: BTreeSet::new(),
            max_delivered: None,
            delivered_count: 0,
            recovering: HashSet::new(),
            mismatches: 0,
        }
    }

    pub fn quorum(&self) -> usize {
        self.quorum
    }

    /// Counts one acceptor message. Phase 1B replies only count while a
    /// recovery of that instance is active; a non-empty one is the same fact
    /// as a Phase 2B at its `vrnd`.
    pub fn process(&mut self, msg: &PaxosMessage) -> Result<Option<DeliverEvent>, LearnerError> {
        match msg.msgtype {
            MsgType::Phase2b => self.vote(msg.inst, msg.rnd, msg.swid, &msg.value),
            MsgType::Phase1b if self.recovering.contains(&msg.inst) => {
                if msg.value.is_empty() {
                    let rec = self.instances.entry(msg.inst).or_default();
                    if !rec.empty_promises.contains(&msg.swid) {
                        rec.empty_promises.push(msg.swid);
                    }
                    Ok(None)
                } else {
                    self.vote(msg.inst, msg.vrnd, msg.swid, &msg.value)
                }
            }
            _ => Ok(None),
        }
    }

    fn vote(&mut self, inst: u32, rnd: u16, swid: u64, value: &Bytes) -> Result<Option<DeliverEvent>, LearnerError> {
        let rec = self.instances.entry(inst).or_default();
        if let Some((drnd, dvalue)) = &rec.delivered {
            if *drnd == rnd && dvalue != value {
                self.mismatches += 1;
                return Err(LearnerError::ValueMismatch { inst, rnd, swid });
            }
            return Ok(None);
        }

        let votes = match rec.rounds.iter_mut().position(|r| r.rnd == rnd) {
            Some(i) => &mut rec.rounds[i],
            None => {
                rec.rounds.push(RoundVotes { rnd, value: value.clone(), voters: Vec::with_capacity(self.quorum) });
                rec.rounds.last_mut().unwrap()
            }
        };
        if votes.value != *value {
            self.mismatches += 1;
            return Err(LearnerError::ValueMismatch { inst, rnd, swid });
        }
        if !votes.voters.contains(&swid) {
            votes.voters.push(swid);
        }
        if votes.voters.len() < self.quorum {
            return Ok(None);
        }

        let value = votes.value.clone();
        rec.delivered = Some((rnd, value.clone()));
        rec.rounds = Vec::new();
        rec.empty_promises = Vec::new();
        self.mark_delivered(inst);
        Ok(Some(DeliverEvent { inst, rnd, value }))
    }

    fn mark_delivered(&mut self, inst: u32) {
        self.delivered_count += 1;
        self.max_delivered = Some(self.max_delivered.map_or(inst, |m| m.max(inst)));
        if u64::from(inst) == self.frontier {
            self.frontier += 1;
            while self.frontier <= u64::from(u32::MAX) && self.delivered_above.remove(&(self.frontier as u32)) {
                self.frontier += 1;
            }
        } else {
            self.delivered_above.insert(inst);
        }
    }

    pub fn is_delivered(&self, inst: u32) -> bool {
        u64::from(inst) < self.frontier || self.delivered_above.contains(&inst)
    }

    pub fn delivered(&self, inst: u32) -> Option<(u16, &Bytes)> {
        self.instances.get(&inst).and_then(|r| r.delivered.as_ref()).map(|(rnd, v)| (*rnd, v))
    }

    pub fn delivered_count(&self) -> u64 {
        self.delivered_count
    }

    /// Smallest instance not yet delivered; everything below it is.
    pub fn frontier(&self) -> u64 {
        self.frontier
    }

    pub fn max_delivered(&self) -> Option<u32> {
        self.max_delivered
    }

    /// True if some instance below the highest delivered one is missing.
    pub fn has_gaps(&self) -> bool {
        !self.delivered_above.is_empty()
    }

    /// Undelivered instances below the highest delivered instance, ascending.
    pub fn gaps(&self) -> Vec<u32> {
        let Some(max) = self.max_delivered else {
            return Vec::new();
        };
        let mut gaps = Vec::new();
        let mut next = self.frontier;
        for &d in &self.delivered_above {
            gaps.extend(next as u32..d);
            next = u64::from(d) + 1;
        }
        debug_assert!(next > u64::from(max));
        gaps
    }

    pub fn begin_recovery(&mut self, inst: u32) {
        self.recovering.insert(inst);
    }

    pub fn end_recovery(&mut self, inst: u32) {
        self.recovering.remove(&inst);
        if let Some(rec) = self.instances.get_mut(&inst) {
            rec.empty_promises.clear();
        }
    }

    /// A quorum of acceptors reported no vote for `inst` during recovery.
    pub fn no_vote_quorum(&self, inst: u32) -> bool {
        self.instances.get(&inst).is_some_and(|r| r.empty_promises.len() >= self.quorum)
    }

    /// Number of VALUE_MISMATCH protocol violations observed.
    pub fn mismatches(&self) -> u64 {
        self.mismatches
    }
}

type DeliverFn = Box<dyn FnMut(&[u8], u32) + Send>;

/// A tally plus the application's deliver callback.
pub struct Learner {
    tally: LearnerTally,
    deliver: Option<DeliverFn>,
}

impl std::fmt::Debug for Learner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Learner").field("tally", &self.tally).field("deliver", &self.deliver.is_some()).finish()
    }
}

impl Learner {
    pub fn new(acceptors: usize) -> Self {
        Learner { tally: LearnerTally::new(acceptors), deliver: None }
    }

    /// Installs the callback invoked with `(value, instance)` once per
    /// delivered instance, in the order quorums complete.
    pub fn register_deliver(&mut self, callback: impl FnMut(&[u8], u32) + Send + 'static) {
        self.deliver = Some(Box::new(callback));
    }

    pub fn process(&mut self, msg: &PaxosMessage) -> Result<Option<DeliverEvent>, LearnerError> {
        let ev = self.tally.process(msg)?;
        if let (Some(ev), Some(cb)) = (&ev, self.deliver.as_mut()) {
            cb(&ev.value, ev.inst);
        }
        Ok(ev)
    }

    pub fn tally(&self) -> &LearnerTally {
        &self.tally
    }

    pub fn tally_mut(&mut self) -> &mut LearnerTally {
        &mut self.tally
    }

    pub fn gaps(&self) -> Vec<u32> {
        self.tally.gaps()
    }
}
