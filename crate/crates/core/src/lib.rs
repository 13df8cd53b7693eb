//! Paxos with the coordinator and acceptor expressed as packet-rewriting
//! pipelines over a fixed binary header, plus the proposer and learner
//! libraries, a deterministic network simulator, a UDP runtime, reference
//! applications and a benchmark harness.

pub mod apps;
pub mod bench;
pub mod client;
pub mod dataplane;
pub mod node;
pub mod runtime;
pub mod simnet;
pub mod wire;
