//! Reference applications driven by the deliver callback: an echo responder
//! and a replicated key-value store.

mod kv;

pub use kv::{decode_response, encode_response, KvError, KvKind, KvOp, KvStatus, KvStore, MAX_KEY_LEN};

use std::collections::{BTreeMap, HashMap};

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::client::{Deduplicator, Envelope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppKind {
    #[default]
    Echo,
    Kv,
}

/// Application response routed back to the submitting client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub client_id: u64,
    pub req_seq: u64,
    pub payload: Bytes,
}

/// One application payload surfaced to the state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Applied {
    pub inst: u32,
    pub client_id: u64,
    pub req_seq: u64,
}

#[derive(Debug)]
enum State {
    Echo,
    Kv(KvStore),
}

/// Application replica sitting behind a learner.
///
/// Discards no-ops and values chosen more than once, and answers a repeated
/// request with the response it produced the first time. The KV store needs
/// sequential semantics, so it applies in instance order and buffers deliveries
/// that arrive ahead of a gap; echo applies in delivery order.
#[derive(Debug)]
pub struct Replica {
    state: State,
    ordered: bool,
    next_apply: u64,
    buffer: BTreeMap<u32, Bytes>,
    dedup: Deduplicator,
    responses: HashMap<(u64, u64), Bytes>,
    applied: Vec<Applied>,
    noops: u64,
}

impl Replica {
    pub fn new(kind: AppKind) -> Self {
        let (state, ordered) = match kind {
            AppKind::Echo => (State::Echo, false),
            AppKind::Kv => (State::Kv(KvStore::new()), true),
        };
        Replica {
            state,
            ordered,
            next_apply: 0,
            buffer: BTreeMap::new(),
            dedup: Deduplicator::default(),
            responses: HashMap::new(),
            applied: Vec::new(),
            noops: 0,
        }
    }

    /// Feeds one delivered value; returns the replies it produced.
    pub fn on_deliver(&mut self, inst: u32, value: &Bytes) -> Vec<Reply> {
        let mut replies = Vec::new();
        if !self.ordered {
            self.apply(inst, value, &mut replies);
            return replies;
        }
        if u64::from(inst) < self.next_apply {
            return replies;
        }
        self.buffer.insert(inst, value.clone());
        while let Some(v) = u32::try_from(self.next_apply).ok().and_then(|i| self.buffer.remove(&i)) {
            self.apply(self.next_apply as u32, &v, &mut replies);
            self.next_apply += 1;
        }
        replies
    }

    fn apply(&mut self, inst: u32, value: &Bytes, replies: &mut Vec<Reply>) {
        let Some(env) = Envelope::decode(value) else {
            return;
        };
        if env.is_noop() {
            self.noops += 1;
            return;
        }
        let key = (env.client_id, env.req_seq);
        let payload = if self.dedup.first_time(env.client_id, env.req_seq) {
            self.applied.push(Applied { inst, client_id: env.client_id, req_seq: env.req_seq });
            match &mut self.state {
                State::Echo => env.payload.clone(),
                State::Kv(store) => {
                    let resp = store.apply(&env.payload).unwrap_or_else(|_| encode_response(KvStatus::Malformed, &[]));
                    self.responses.insert(key, resp.clone());
                    resp
                }
            }
        } else {
            match &self.state {
                State::Echo => env.payload.clone(),
                State::Kv(_) => self.responses[&key].clone(),
            }
        };
        replies.push(Reply { client_id: env.client_id, req_seq: env.req_seq, payload });
    }

    pub fn kv(&self) -> Option<&KvStore> {
        match &self.state {
            State::Kv(s) => Some(s),
            State::Echo => None,
        }
    }

    /// Digest of the application state; echo replicas are stateless.
    pub fn digest(&self) -> [u8; 32] {
        self.kv().map(KvStore::digest).unwrap_or_default()
    }

    /// Payloads surfaced so far, in application order.
    pub fn applied(&self) -> &[Applied] {
        &self.applied
    }

    pub fn duplicates(&self) -> u64 {
        self.dedup.duplicates()
    }

    pub fn noops(&self) -> u64 {
        self.noops
    }

    /// Instances waiting for an earlier gap to close.
    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(client: u64, seq: u64, payload: Bytes) -> Bytes {
        Envelope::new(client, seq, payload).encode()
    }

    fn put(k: &'static [u8], v: &'static [u8]) -> Bytes {
        KvOp::put(k, v).encode().unwrap()
    }

    #[test]
    fn echo_replies_and_dedups() {
        let mut r = Replica::new(AppKind::Echo);
        let v = env(1, 0, Bytes::from_static(b"hello"));
        let first = r.on_deliver(3, &v);
        assert_eq!(first[0].payload, Bytes::from_static(b"hello"));
        let again = r.on_deliver(4, &v);
        assert_eq!(again, first);
        assert_eq!(r.applied().len(), 1);
        assert_eq!(r.duplicates(), 1);
    }

    #[test]
    fn kv_applies_in_instance_order() {
        let mut r = Replica::new(AppKind::Kv);
        let get = KvOp::get(&b"k"[..]).encode().unwrap();
        assert!(r.on_deliver(1, &env(1, 1, get)).is_empty());
        assert_eq!(r.buffered(), 1);
        let replies = r.on_deliver(0, &env(1, 0, put(b"k", b"v")));
        assert_eq!(replies.len(), 2);
        assert_eq!(decode_response(&replies[1].payload).unwrap(), (KvStatus::Ok, Bytes::from_static(b"v")));
    }

    #[test]
    fn resubmitted_put_applies_once() {
        let mut r = Replica::new(AppKind::Kv);
        let v = env(1, 0, put(b"k", b"v"));
        r.on_deliver(0, &v);
        r.on_deliver(1, &Envelope::noop(1).encode());
        let replies = r.on_deliver(2, &v);
        assert_eq!(replies.len(), 1);
        assert_eq!(r.kv().unwrap().applied_count(), 1);
        assert_eq!(r.noops(), 1);
    }

    #[test]
    fn equal_sequences_give_equal_digests() {
        let ops = [put(b"a", b"1"), put(b"b", b"2"), KvOp::del(&b"a"[..]).encode().unwrap()];
        let mut x = Replica::new(AppKind::Kv);
        let mut y = Replica::new(AppKind::Kv);
        for (i, op) in ops.iter().enumerate() {
            x.on_deliver(i as u32, &env(1, i as u64, op.clone()));
        }
        for (i, op) in ops.iter().enumerate().rev() {
            y.on_deliver(i as u32, &env(1, i as u64, op.clone()));
        }
        assert_eq!(x.digest(), y.digest());
        assert_eq!(x.kv().unwrap().len(), 1);
    }

    #[test]
    fn malformed_kv_payload_gets_error_status() {
        let mut r = Replica::new(AppKind::Kv);
        let replies = r.on_deliver(0, &env(1, 0, Bytes::from_static(b"\xff")));
        assert_eq!(decode_response(&replies[0].payload).unwrap().0, KvStatus::Malformed);
    }
}
