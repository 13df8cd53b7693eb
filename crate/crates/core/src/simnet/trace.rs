use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::Serialize;

use super::config::{FaultEvent, RoleId};
use crate::node::Packet;
use crate::wire::PaxosMessage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Send,
    Drop,
    Duplicate,
    Receive,
    /// Arrived at a killed role.
    Discard,
    Fault,
    Deliver,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Snapshot {
    Paxos { msgtype: &'static str, inst: u32, rnd: u16, vrnd: u16, swid: u64, value: String },
    Reply { client_id: u64, req_seq: u64, len: usize },
    Trim { inst: u32 },
}

impl Snapshot {
    pub fn of_message(m: &PaxosMessage) -> Self {
        Snapshot::Paxos {
            msgtype: m.msgtype.name(),
            inst: m.inst,
            rnd: m.rnd,
            vrnd: m.vrnd,
            swid: m.swid,
            value: hex::encode(&m.value),
        }
    }

    pub fn of(p: &Packet) -> Self {
        match p {
            Packet::Paxos(m) => Snapshot::of_message(m),
            Packet::Reply(r) => Snapshot::Reply { client_id: r.client_id, req_seq: r.req_seq, len: r.payload.len() },
            Packet::Trim(inst) => Snapshot::Trim { inst: *inst },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub t_us: u64,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<RoleId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to: Option<RoleId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub packet: Option<Snapshot>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultEvent>,
}

/// Message accounting across the whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Conservation {
    pub sent: u64,
    pub dropped: u64,
    pub duplicated: u64,
    /// Received or discarded at a dead role.
    pub arrived: u64,
    /// Still on the wire when the run stopped.
    pub in_flight: u64,
}

impl Conservation {
    /// Every arrival is one send plus its duplicates, minus drops.
    pub fn holds(&self) -> bool {
        self.sent + self.duplicated == self.dropped + self.arrived + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoleSummary {
    pub id: RoleId,
    pub alive: bool,
    /// Inbound messages by type (`phase2b`, `reply`, ...).
    pub received: BTreeMap<String, u64>,
    pub counters: BTreeMap<String, u64>,
}

/// Result of a run: the event log (when recording) and final counters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimTrace {
    pub end_time_us: u64,
    #[serde(skip)]
    pub events: Vec<TraceEvent>,
    pub roles: Vec<RoleSummary>,
    pub conservation: Conservation,
}

impl SimTrace {
    pub fn role(&self, id: RoleId) -> Option<&RoleSummary> {
        self.roles.iter().find(|r| r.id == id)
    }

    /// Writes the event log as line-delimited JSON.
    pub fn write_events<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Writes the summary record (counters and conservation) as one JSON line.
    pub fn write_summary<W: Write>(&self, mut w: W) -> io::Result<()> {
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")
    }
}
