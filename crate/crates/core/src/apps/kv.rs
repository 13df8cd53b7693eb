use std::collections::BTreeMap;

use bytes::{Buf, BufMut, Bytes, BytesMut};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAX_KEY_LEN: usize = 255;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KvError {
    #[error("key must not be empty")]
    EmptyKey,
    #[error("key of {0} bytes exceeds {MAX_KEY_LEN}")]
    KeyTooLong(usize),
    #[error("malformed operation: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum KvKind {
    Get = 0,
    Put = 1,
    Del = 2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvOp {
    pub kind: KvKind,
    pub key: Bytes,
    pub value: Bytes,
}

impl KvOp {
    pub fn get(key: impl Into<Bytes>) -> Self {
        KvOp { kind: KvKind::Get, key: key.into(), value: Bytes::new() }
    }

    pub fn put(key: impl Into<Bytes>, value: impl Into<Bytes>) -> Self {
        KvOp { kind: KvKind::Put, key: key.into(), value: value.into() }
    }

    pub fn del(key: impl Into<Bytes>) -> Self {
        KvOp { kind: KvKind::Del, key: key.into(), value: Bytes::new() }
    }

    /// `kind(1) | key_len(1) | key | value_len(4) | value`, big-endian.
    pub fn encode(&self) -> Result<Bytes, KvError> {
        if self.key.is_empty() {
            return Err(KvError::EmptyKey);
        }
        if self.key.len() > MAX_KEY_LEN {
            return Err(KvError::KeyTooLong(self.key.len()));
        }
        if self.kind != KvKind::Put && !self.value.is_empty() {
            return Err(KvError::Malformed("only PUT carries a value"));
        }
        let mut buf = BytesMut::with_capacity(6 + self.key.len() + self.value.len());
        buf.put_u8(self.kind as u8);
        buf.put_u8(self.key.len() as u8);
        buf.extend_from_slice(&self.key);
        buf.put_u32(self.value.len() as u32);
        buf.extend_from_slice(&self.value);
        Ok(buf.freeze())
    }

    pub fn decode(bytes: &Bytes) -> Result<KvOp, KvError> {
        let mut buf = bytes.clone();
        if buf.remaining() < 2 {
            return Err(KvError::Malformed("short header"));
        }
        let kind = match buf.get_u8() {
            0 => KvKind::Get,
            1 => KvKind::Put,
            2 => KvKind::Del,
            _ => return Err(KvError::Malformed("unknown kind")),
        };
        let key_len = buf.get_u8() as usize;
        if key_len == 0 {
            return Err(KvError::Malformed("empty key"));
        }
        if buf.remaining() < key_len + 4 {
            return Err(KvError::Malformed("short key"));
        }
        let key = buf.split_to(key_len);
        let value_len = buf.get_u32() as usize;
        if buf.remaining() != value_len {
            return Err(KvError::Malformed("value length mismatch"));
        }
        if kind != KvKind::Put && value_len != 0 {
            return Err(KvError::Malformed("only PUT carries a value"));
        }
        Ok(KvOp { kind, key, value: buf })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum KvStatus {
    Ok = 0,
    NotFound = 1,
    Malformed = 2,
}

/// `status(1) | value_len(4) | value`.
pub fn encode_response(status: KvStatus, value: &[u8]) -> Bytes {
    let mut buf = BytesMut::with_capacity(5 + value.len());
    buf.put_u8(status as u8);
    buf.put_u32(value.len() as u32);
    buf.extend_from_slice(value);
    buf.freeze()
}

pub fn decode_response(bytes: &[u8]) -> Result<(KvStatus, Bytes), KvError> {
    if bytes.len() < 5 {
        return Err(KvError::Malformed("short response"));
    }
    let status = match bytes[0] {
        0 => KvStatus::Ok,
        1 => KvStatus::NotFound,
        2 => KvStatus::Malformed,
        _ => return Err(KvError::Malformed("unknown status")),
    };
    let len = u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize;
    if bytes.len() != 5 + len {
        return Err(KvError::Malformed("response length mismatch"));
    }
    Ok((status, Bytes::copy_from_slice(&bytes[5..])))
}

/// Ordered in-memory key-value store.
#[derive(Debug, Clone, Default)]
pub struct KvStore {
    map: BTreeMap<Bytes, Bytes>,
    applied_count: u64,
}

impl KvStore {
    pub fn new() -> Self {
        KvStore::default()
    }

    /// Decodes and executes one operation, returning the encoded response.
    pub fn apply(&mut self, op_bytes: &Bytes) -> Result<Bytes, KvError> {
        let op = KvOp::decode(op_bytes)?;
        self.applied_count += 1;
        Ok(match op.kind {
            KvKind::Get => match self.map.get(&op.key) {
                Some(v) => encode_response(KvStatus::Ok, v),
                None => encode_response(KvStatus::NotFound, &[]),
            },
            KvKind::Put => {
                self.map.insert(op.key, op.value);
                encode_response(KvStatus::Ok, &[])
            }
            KvKind::Del => {
                self.map.remove(&op.key);
                encode_response(KvStatus::Ok, &[])
            }
        })
    }

    pub fn get(&self, key: &[u8]) -> Option<&Bytes> {
        self.map.get(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn applied_count(&self) -> u64 {
        self.applied_count
    }

    /// SHA-256 over the store contents in key order.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (k, v) in &self.map {
            h.update((k.len() as u32).to_be_bytes());
            h.update(k);
            h.update((v.len() as u32).to_be_bytes());
            h.update(v);
        }
        h.finalize().into()
    }
}
