use std::collections::HashSet;

use bytes::{BufMut, Bytes, BytesMut};

use crate::wire::MAX_VALUE_LEN;

pub const ENVELOPE_LEN: usize = 16;

/// Largest application payload `submit` accepts.
pub const MAX_PAYLOAD_LEN: usize = MAX_VALUE_LEN - ENVELOPE_LEN;

/// Client id reserved for recovery no-ops.
pub const NOOP_CLIENT_ID: u64 = u64::MAX;

/// `client_id | req_seq | payload`, prepended to every submitted value so
/// learners can discard values that were chosen more than once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub client_id: u64,
    pub req_seq: u64,
    pub payload: Bytes,
}

impl Envelope {
    pub fn new(client_id: u64, req_seq: u64, payload: impl Into<Bytes>) -> Self {
        Envelope { client_id, req_seq, payload: payload.into() }
    }

    /// The filler value proposed when recovering an instance.
    pub fn noop(tag: u64) -> Self {
        Envelope::new(NOOP_CLIENT_ID, tag, Bytes::new())
    }

    pub fn is_noop(&self) -> bool {
        self.client_id == NOOP_CLIENT_ID
    }

    pub fn encode(&self) -> Bytes {
        let mut buf = BytesMut::with_capacity(ENVELOPE_LEN + self.payload.len());
        buf.put_u64(self.client_id);
        buf.put_u64(self.req_seq);
        buf.extend_from_slice(&self.payload);
        buf.freeze()
    }

    /// `None` if the value is too short to carry an envelope.
    pub fn decode(value: &Bytes) -> Option<Envelope> {
        if value.len() < ENVELOPE_LEN {
            return None;
        }
        Some(Envelope {
            client_id: u64::from_be_bytes(value[..8].try_into().unwrap()),
            req_seq: u64::from_be_bytes(value[8..16].try_into().unwrap()),
            payload: value.slice(ENVELOPE_LEN..),
        })
    }
}

/// Remembers which `(client_id, req_seq)` pairs have been surfaced.
#[derive(Debug, Default, Clone)]
pub struct Deduplicator {
    seen: HashSet<(u64, u64)>,
    duplicates: u64,
}

impl Deduplicator {
    /// True the first time a pair is offered.
    pub fn first_time(&mut self, client_id: u64, req_seq: u64) -> bool {
        let fresh = self.seen.insert((client_id, req_seq));
        if !fresh {
            self.duplicates += 1;
        }
        fresh
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}
