use bytes::Bytes;

use super::{Destinations, DropReason, Emitted, PipelineMetrics};
use crate::wire::{MsgType, PaxosMessage};

/// One entry of the acceptor's bounded history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcceptorSlot {
    pub inst_tag: u32,
    pub promised_rnd: u16,
    pub vrnd: u16,
    pub has_vote: bool,
    pub value: Bytes,
}

impl AcceptorSlot {
    fn fresh(inst: u32, initial_rnd: u16) -> Self {
        AcceptorSlot { inst_tag: inst, promised_rnd: initial_rnd, vrnd: 0, has_vote: false, value: Bytes::new() }
    }
}

/// Fixed-capacity vote history. Instance `i` lives in slot `i % capacity`; a
/// higher instance landing on an occupied slot evicts the older one.
#[derive(Debug, Clone)]
pub struct AcceptorState {
    swid: u64,
    initial_rnd: u16,
    slots: Vec<AcceptorSlot>,
    trim_watermark: u64,
    metrics: PipelineMetrics,
}

impl AcceptorState {
    /// Slots start promised to round 0, i.e. Phase 1 for the coordinator's
    /// round is treated as already done.
    pub fn new(swid: u64, capacity: usize) -> Self {
        AcceptorState::with_initial_round(swid, capacity, 0)
    }

    pub fn with_initial_round(swid: u64, capacity: usize, initial_rnd: u16) -> Self {
        assert!(capacity > 0, "acceptor capacity must be positive");
        let slots = (0..capacity).map(|i| AcceptorSlot::fresh(i as u32, initial_rnd)).collect();
        AcceptorState { swid, initial_rnd, slots, trim_watermark: 0, metrics: PipelineMetrics::default() }
    }

    pub fn swid(&self) -> u64 {
        self.swid
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    /// Lowest instance the acceptor still serves.
    pub fn trim_watermark(&self) -> u64 {
        self.trim_watermark
    }

    pub fn metrics(&self) -> &PipelineMetrics {
        &self.metrics
    }

    fn slot_index(&self, inst: u32) -> usize {
        inst as usize % self.slots.len()
    }

    /// The slot currently holding `inst`, if it has not been evicted or
    /// trimmed.
    pub fn slot(&self, inst: u32) -> Option<&AcceptorSlot> {
        let slot = &self.slots[self.slot_index(inst)];
        (slot.inst_tag == inst && u64::from(inst) >= self.trim_watermark).then_some(slot)
    }

    /// Stops serving every instance `<= inst`. Lower watermarks are ignored.
    pub fn trim(&mut self, inst: u32) {
        self.trim_watermark = self.trim_watermark.max(u64::from(inst) + 1);
    }

    /// Runs one packet through the acceptor pipeline.
    pub fn process(&mut self, mut msg: PaxosMessage) -> Option<Emitted> {
        self.metrics.on_receive(msg.msgtype);
        if !matches!(msg.msgtype, MsgType::Phase1a | MsgType::Phase2a) {
            self.metrics.on_drop(DropReason::Ignored);
            return None;
        }

        let idx = self.slot_index(msg.inst);
        let initial_rnd = self.initial_rnd;
        let slot = &mut self.slots[idx];
        if u64::from(msg.inst) < self.trim_watermark.max(u64::from(slot.inst_tag)) {
            self.metrics.on_drop(DropReason::Stale);
            return None;
        }
        if msg.inst > slot.inst_tag {
            *slot = AcceptorSlot::fresh(msg.inst, initial_rnd);
        }

        let dest;
        match msg.msgtype {
            MsgType::Phase1a => {
                if msg.rnd < slot.promised_rnd {
                    self.metrics.on_drop(DropReason::LowerRound);
                    return None;
                }
                slot.promised_rnd = msg.rnd;
                msg.msgtype = MsgType::Phase1b;
                msg.vrnd = slot.vrnd;
                msg.value = if slot.has_vote { slot.value.clone() } else { Bytes::new() };
                dest = Destinations::REQUESTER | Destinations::LEARNERS;
            }
            MsgType::Phase2a => {
                if msg.rnd < slot.promised_rnd {
                    self.metrics.on_drop(DropReason::LowerRound);
                    return None;
                }
                if slot.has_vote && msg.rnd <= slot.vrnd {
                    self.metrics.on_drop(DropReason::AlreadyVoted);
                    return None;
                }
                slot.promised_rnd = msg.rnd;
                slot.vrnd = msg.rnd;
                slot.has_vote = true;
                slot.value = msg.value.clone();
                msg.msgtype = MsgType::Phase2b;
                msg.vrnd = msg.rnd;
                dest = Destinations::LEARNERS | Destinations::REQUESTER;
            }
            _ => unreachable!(),
        }

        msg.swid = self.swid;
        self.metrics.on_emit(msg.msgtype);
        Some(Emitted { msg, dest })
    }
}
