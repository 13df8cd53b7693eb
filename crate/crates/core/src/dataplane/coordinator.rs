use super::{DataplaneError, Destinations, DropReason, Emitted, PipelineMetrics};
use crate::wire::{MsgType, PaxosMessage};

/// Sequencer that binds proposer requests to consensus instances.
///
/// Phase 1 is assumed to have run ahead of time at `rnd`, so a request turns
/// directly into a Phase 2A for the next instance.
#[derive(Debug, Clone)]
pub struct CoordinatorState {
    next_inst: u32,
    exhausted: bool,
    rnd: u16,
    swid: u64,
    metrics: PipelineMetrics,
}

impl CoordinatorState {
    /// A coordinator that issues `start_inst` first. A takeover backup is
    /// seeded with an estimate of the failed coordinator's last instance.
    pub fn new(start_inst: u32, swid: u64) -> Self {
        CoordinatorState::with_round(start_inst, 0, swid)
    }

    pub fn with_round(start_inst: u32, rnd: u16, swid: u64) -> Self {
        CoordinatorState { next_inst: start_inst, exhausted: false, rnd, swid, metrics: PipelineMetrics::default() }
    }

    /// Instance the next request will be bound to, or `None` once the
    /// instance space is used up.
    pub fn next_inst(&self) -> Option<u32> {
        (!self.exhausted).then_some(self.next_inst)
    }

    pub fn rnd(&self) -> u16 {
        self.rnd
    }

    pub fn swid(&self) -> u64 {
        self.swid
    }

    pub fn metrics(&self) -> &PipelineMetrics {
        &self.metrics
    }

    /// Rewrites a REQUEST into a PHASE_2A for every acceptor. Anything else is
    /// dropped.
    pub fn process(&mut self, mut msg: PaxosMessage) -> Result<Option<Emitted>, DataplaneError> {
        self.metrics.on_receive(msg.msgtype);
        if msg.msgtype != MsgType::Request {
            self.metrics.on_drop(DropReason::Ignored);
            return Ok(None);
        }
        if self.exhausted {
            self.metrics.on_drop(DropReason::Exhausted);
            return Err(DataplaneError::InstanceExhausted(u32::MAX));
        }

        msg.msgtype = MsgType::Phase2a;
        msg.inst = self.next_inst;
        msg.rnd = self.rnd;
        msg.swid = self.swid;
        match self.next_inst.checked_add(1) {
            Some(n) => self.next_inst = n,
            None => self.exhausted = true,
        }

        self.metrics.on_emit(MsgType::Phase2a);
        Ok(Some(Emitted { msg, dest: Destinations::ACCEPTORS }))
    }
}
