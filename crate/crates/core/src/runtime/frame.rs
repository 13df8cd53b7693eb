//! Datagram framing for the UDP runtime.
//!
//! A datagram is either a bare Paxos message (see [`crate::wire`]) or a
//! control frame. Control frames start with a 16-bit tag in the 0xCA00 range,
//! which can never be a valid msgtype.

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};

use bytes::{Buf, BufMut, Bytes};
use thiserror::Error;

use crate::apps::Reply;
use crate::node::Packet;
use crate::wire::{self, WireError};

/// tag(2) | client_id(8) | req_seq(8) | payload
pub const REPLY_TAG: u16 = 0xCA01;
/// tag(2) | inst(4)
pub const TRIM_TAG: u16 = 0xCA02;
/// tag(2)
pub const STATS_REQUEST_TAG: u16 = 0xCA03;
/// tag(2) | UTF-8 lines `name value`
pub const STATS_REPLY_TAG: u16 = 0xCA04;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Datagram {
    Packet(Packet),
    StatsRequest,
    StatsReply(BTreeMap<String, u64>),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("control frame {tag:#06x} is malformed")]
    Malformed { tag: u16 },
}

pub fn encode_packet(p: &Packet, buf: &mut Vec<u8>) -> Result<(), WireError> {
    buf.clear();
    match p {
        Packet::Paxos(m) => wire::encode_into(m, buf)?,
        Packet::Reply(r) => {
            buf.put_u16(REPLY_TAG);
            buf.put_u64(r.client_id);
            buf.put_u64(r.req_seq);
            buf.put_slice(&r.payload);
        }
        Packet::Trim(inst) => {
            buf.put_u16(TRIM_TAG);
            buf.put_u32(*inst);
        }
    }
    Ok(())
}

pub fn encode_stats(counters: &BTreeMap<String, u64>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.put_u16(STATS_REPLY_TAG);
    for (k, v) in counters {
        buf.extend_from_slice(format!("{k} {v}\n").as_bytes());
    }
    buf
}

pub fn stats_request() -> [u8; 2] {
    STATS_REQUEST_TAG.to_be_bytes()
}

pub fn decode(bytes: &[u8]) -> Result<Datagram, FrameError> {
    let tag = match bytes {
        [a, b, ..] => u16::from_be_bytes([*a, *b]),
        _ => return Ok(Datagram::Packet(Packet::Paxos(wire::decode(bytes)?))),
    };
    let mut body = &bytes[2..];
    match tag {
        REPLY_TAG => {
            if body.len() < 16 {
                return Err(FrameError::Malformed { tag });
            }
            let client_id = body.get_u64();
            let req_seq = body.get_u64();
            Ok(Datagram::Packet(Packet::Reply(Reply { client_id, req_seq, payload: Bytes::copy_from_slice(body) })))
        }
        TRIM_TAG => {
            if body.len() != 4 {
                return Err(FrameError::Malformed { tag });
            }
            Ok(Datagram::Packet(Packet::Trim(body.get_u32())))
        }
        STATS_REQUEST_TAG => Ok(Datagram::StatsRequest),
        STATS_REPLY_TAG => {
            let text = std::str::from_utf8(body).map_err(|_| FrameError::Malformed { tag })?;
            let mut m = BTreeMap::new();
            for line in text.lines() {
                let (k, v) = line.split_once(' ').ok_or(FrameError::Malformed { tag })?;
                let v = v.parse().map_err(|_| FrameError::Malformed { tag })?;
                m.insert(k.to_string(), v);
            }
            Ok(Datagram::StatsReply(m))
        }
        _ => Ok(Datagram::Packet(Packet::Paxos(wire::decode(bytes)?))),
    }
}

/// Client identity derived from its IPv4 socket address, so a learner can
/// route a reply without a registry: `ip << 16 | port`.
pub fn client_id_of(addr: SocketAddr) -> Option<u64> {
    match addr.ip() {
        IpAddr::V4(ip) => Some((u64::from(u32::from(ip)) << 16) | u64::from(addr.port())),
        IpAddr::V6(_) => None,
    }
}

pub fn client_addr(client_id: u64) -> Option<SocketAddr> {
    if client_id >> 48 != 0 {
        return None;
    }
    let ip = Ipv4Addr::from((client_id >> 16) as u32);
    Some(SocketAddr::from((ip, client_id as u16)))
}
