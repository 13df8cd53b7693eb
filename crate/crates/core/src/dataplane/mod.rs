//! Coordinator and acceptor pipelines.
//!
//! Both roles follow the switch execution model: a stage consumes one packet
//! and forwards a rewritten copy of it. Nothing here allocates a structurally
//! new message, and rejected packets are dropped without a reply.

mod acceptor;
mod coordinator;

pub use acceptor::{AcceptorSlot, AcceptorState};
pub use coordinator::CoordinatorState;

use std::collections::BTreeMap;

use bitflags::bitflags;
use serde::Serialize;
use thiserror::Error;

use crate::wire::{MsgType, PaxosMessage};

bitflags! {
    /// Where a rewritten packet goes. Hosts resolve these to concrete peers.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
    pub struct Destinations: u8 {
        const ACCEPTORS = 0b001;
        const LEARNERS  = 0b010;
        /// The sender of the packet that triggered this one.
        const REQUESTER = 0b100;
    }
}

/// A packet leaving a pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emitted {
    pub msg: PaxosMessage,
    pub dest: Destinations,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataplaneError {
    #[error("coordinator has used every instance number up to {0}")]
    InstanceExhausted(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Instance is below the slot's current tag or the trim watermark.
    Stale,
    /// Round is below the slot's promise.
    LowerRound,
    /// The slot already voted at this round or a higher one.
    AlreadyVoted,
    /// Message type this stage does not handle.
    Ignored,
    Exhausted,
}

impl DropReason {
    pub fn name(self) -> &'static str {
        match self {
            DropReason::Stale => "stale",
            DropReason::LowerRound => "lower_round",
            DropReason::AlreadyVoted => "already_voted",
            DropReason::Ignored => "ignored",
            DropReason::Exhausted => "exhausted",
        }
    }
}

/// Per-stage packet counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PipelineMetrics {
    pub received: [u64; 5],
    pub emitted: [u64; 5],
    pub dropped: BTreeMap<DropReason, u64>,
}

impl PipelineMetrics {
    pub(crate) fn on_receive(&mut self, t: MsgType) {
        self.received[t as usize] += 1;
    }

    pub(crate) fn on_emit(&mut self, t: MsgType) {
        self.emitted[t as usize] += 1;
    }

    pub(crate) fn on_drop(&mut self, reason: DropReason) {
        *self.dropped.entry(reason).or_default() += 1;
    }

    pub fn received(&self, t: MsgType) -> u64 {
        self.received[t as usize]
    }

    pub fn emitted(&self, t: MsgType) -> u64 {
        self.emitted[t as usize]
    }

    pub fn dropped(&self, reason: DropReason) -> u64 {
        self.dropped.get(&reason).copied().unwrap_or(0)
    }

    /// Flattens the counters into `rx.*`, `tx.*` and `drop.*` entries.
    pub fn export(&self, out: &mut BTreeMap<String, u64>) {
        for t in MsgType::ALL {
            if self.received(t) > 0 {
                out.insert(format!("rx.{}", t.name()), self.received(t));
            }
            if self.emitted(t) > 0 {
                out.insert(format!("tx.{}", t.name()), self.emitted(t));
            }
        }
        for (reason, n) in &self.dropped {
            out.insert(format!("drop.{}", reason.name()), *n);
        }
    }
}
