//! Paxos packet header codec.
//!
//! Every consensus message carries the union of all Paxos fields so that a
//! pipeline stage can turn one message type into another by rewriting header
//! fields in place. The fixed header is 44 bytes, network byte order:
//!
//! ```text
//!  0      2          6      8      10               18           22                    44
//!  +------+----------+------+------+----------------+------------+---------------------+
//!  | type |   inst   | rnd  | vrnd |      swid      | value_len  |  reserved (zeroed)  |
//!  +------+----------+------+------+----------------+------------+---------------------+
//!  | value bytes (value_len, at most 1400) ...
//! ```
//!
//! A zero-length value is only legal in `PHASE_1B`, where it means "no vote".

use bytes::{BufMut, Bytes};
use thiserror::Error;

/// Size of the fixed Paxos header in bytes.
pub const HEADER_LEN: usize = 44;

/// Largest value that fits in one datagram without IP fragmentation.
pub const MAX_VALUE_LEN: usize = 1400;

const RESERVED_OFFSET: usize = 22;

/// Bytes added by Ethernet (14), IPv4 (20) and UDP (8) framing.
pub const L2_L4_FRAMING: usize = 42;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("value of {0} bytes exceeds the {MAX_VALUE_LEN}-byte limit")]
    OversizedValue(usize),
    #[error("{0:?} requires a non-empty value")]
    EmptyValue(MsgType),
    #[error("truncated datagram: need {need} bytes, got {got}")]
    Truncated { need: usize, got: usize },
    #[error("unknown msgtype code {0}")]
    BadMsgType(u16),
    #[error("reserved header bytes are not zero")]
    NonzeroReserved,
    #[error("zero-length value is only allowed in PHASE_1B, got {0:?}")]
    SentinelViolation(MsgType),
    #[error("{0} unexpected bytes after the value")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u16)]
pub enum MsgType {
    Request = 0,
    Phase1a = 1,
    Phase1b = 2,
    Phase2a = 3,
    Phase2b = 4,
}

impl MsgType {
    pub const ALL: [MsgType; 5] =
        [MsgType::Request, MsgType::Phase1a, MsgType::Phase1b, MsgType::Phase2a, MsgType::Phase2b];

    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Request => "request",
            MsgType::Phase1a => "phase1a",
            MsgType::Phase1b => "phase1b",
            MsgType::Phase2a => "phase2a",
            MsgType::Phase2b => "phase2b",
        }
    }
}

impl TryFrom<u16> for MsgType {
    type Error = WireError;

    fn try_from(code: u16) -> Result<Self, Self::Error> {
        match code {
            0 => Ok(MsgType::Request),
            1 => Ok(MsgType::Phase1a),
            2 => Ok(MsgType::Phase1b),
            3 => Ok(MsgType::Phase2a),
            4 => Ok(MsgType::Phase2b),
            other => Err(WireError::BadMsgType(other)),
        }
    }
}

/// One consensus packet. The meaning of `rnd`, `vrnd` and `value` depends on
/// `msgtype`; see the module docs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PaxosMessage {
    pub msgtype: MsgType,
    pub inst: u32,
    pub rnd: u16,
    pub vrnd: u16,
    pub swid: u64,
    pub value: Bytes,
}

impl PaxosMessage {
    pub fn new(msgtype: MsgType, inst: u32, rnd: u16, swid: u64, value: impl Into<Bytes>) -> Self {
        PaxosMessage { msgtype, inst, rnd, vrnd: 0, swid, value: value.into() }
    }

    /// A proposer request; instance and round are assigned by the coordinator.
    pub fn request(swid: u64, value: impl Into<Bytes>) -> Self {
        PaxosMessage::new(MsgType::Request, 0, 0, swid, value)
    }

    /// Size of this message on the wire.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.value.len()
    }

    /// Checks the invariants `encode` relies on.
    pub fn validate(&self) -> Result<(), WireError> {
        if self.value.len() > MAX_VALUE_LEN {
            return Err(WireError::OversizedValue(self.value.len()));
        }
        if self.value.is_empty() && self.msgtype != MsgType::Phase1b {
            return Err(WireError::EmptyValue(self.msgtype));
        }
        Ok(())
    }
}

/// Encodes `msg` into a freshly allocated buffer of exactly
/// `44 + msg.value.len()` bytes.
pub fn encode(msg: &PaxosMessage) -> Result<Vec<u8>, WireError> {
    let mut buf = Vec::with_capacity(msg.encoded_len());
    encode_into(msg, &mut buf)?;
    Ok(buf)
}

/// Appends the encoding of `msg` to `buf`.
pub fn encode_into(msg: &PaxosMessage, buf: &mut Vec<u8>) -> Result<(), WireError> {
    msg.validate()?;
    buf.put_u16(msg.msgtype.code());
    buf.put_u32(msg.inst);
    buf.put_u16(msg.rnd);
    buf.put_u16(msg.vrnd);
    buf.put_u64(msg.swid);
    buf.put_u32(msg.value.len() as u32);
    buf.put_bytes(0, HEADER_LEN - RESERVED_OFFSET);
    buf.extend_from_slice(&msg.value);
    Ok(())
}

/// Decodes one datagram. The input must be exactly one encoded message.
pub fn decode(bytes: &[u8]) -> Result<PaxosMessage, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated { need: HEADER_LEN, got: bytes.len() });
    }
    let u16_at = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());

    let msgtype = MsgType::try_from(u16_at(0))?;
    let inst = u32_at(2);
    let rnd = u16_at(6);
    let vrnd = u16_at(8);
    let swid = u64::from_be_bytes(bytes[10..18].try_into().unwrap());
    let value_len = u32_at(18) as usize;

    if bytes[RESERVED_OFFSET..HEADER_LEN].iter().any(|&b| b != 0) {
        return Err(WireError::NonzeroReserved);
    }
    if value_len > MAX_VALUE_LEN {
        return Err(WireError::OversizedValue(value_len));
    }
    let need = HEADER_LEN + value_len;
    if bytes.len() < need {
        return Err(WireError::Truncated { need, got: bytes.len() });
    }
    if bytes.len() > need {
        return Err(WireError::TrailingBytes(bytes.len() - need));
    }
    if value_len == 0 && msgtype != MsgType::Phase1b {
        return Err(WireError::SentinelViolation(msgtype));
    }

    Ok(PaxosMessage { msgtype, inst, rnd, vrnd, swid, value: Bytes::copy_from_slice(&bytes[HEADER_LEN..]) })
}
