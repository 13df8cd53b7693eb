//! UDP host for the role drivers in [`crate::node`].
//!
//! Each role owns one socket and one receive/dispatch loop. Fan-out to the
//! acceptor or learner group is a unicast send per member.

mod config;
pub mod frame;

pub use config::{
    load_config, BackupEndpoint, DeploymentConfig, Endpoint, ACCEPTOR_BASE_PORT, BACKUP_COORDINATOR_PORT,
    COORDINATOR_PORT, LEARNER_BASE_PORT, LISTEN_ENV,
};

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::apps::Reply;
use crate::client::ProposerConfig;
use crate::node::{
    AcceptorNode, ClientConfig, ClientNode, CoordinatorNode, LearnerConfig, LearnerNode, Node, Outbox, Packet, Peer,
    RoleKind, Workload,
};
use frame::Datagram;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("no such role in config: {0}")]
    UnknownRole(String),
    #[error("clients cannot run as a standalone role")]
    NotARole,
    #[error("deployment unreachable: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How long a blocked receive waits before timers are checked.
const POLL: Duration = Duration::from_millis(2);
const MAX_DATAGRAM: usize = 2048;

/// Per-launch overrides.
#[derive(Debug, Clone, Default)]
pub struct RoleOptions {
    pub listen: Option<SocketAddr>,
    /// Start instance for a coordinator (defaults to the config value).
    pub start_inst: Option<u32>,
}

impl RoleOptions {
    /// Reads the listen override from the environment.
    pub fn from_env() -> Result<Self, RuntimeError> {
        let listen = match std::env::var(LISTEN_ENV) {
            Ok(v) => Some(v.parse().map_err(|_| RuntimeError::Validation {
                path: LISTEN_ENV.into(),
                message: format!("`{v}` is not a socket address"),
            })?),
            Err(_) => None,
        };
        Ok(RoleOptions { listen, start_inst: None })
    }
}

/// Instantiates the driver for `role`/`id`. Coordinator id 1 is the backup,
/// which starts sequencing at its configured start instance.
pub fn build_node(cfg: &DeploymentConfig, role: RoleKind, id: usize, opts: &RoleOptions) -> Result<Node, RuntimeError> {
    let missing = || RuntimeError::UnknownRole(format!("{role}:{id}"));
    Ok(match role {
        RoleKind::Coordinator => {
            let (swid, start) = match (id, &cfg.backup_coordinator) {
                (0, _) => (cfg.coordinator.swid, cfg.start_inst),
                (1, Some(b)) => (b.swid, b.start_inst),
                _ => return Err(missing()),
            };
            Node::Coordinator(CoordinatorNode::new(opts.start_inst.unwrap_or(start), swid))
        }
        RoleKind::Acceptor => {
            let a = cfg.acceptors.get(id).ok_or_else(missing)?;
            Node::Acceptor(AcceptorNode::new(a.swid, cfg.acceptor_capacity))
        }
        RoleKind::Learner => {
            let l = cfg.learners.get(id).ok_or_else(missing)?;
            Node::Learner(Box::new(LearnerNode::new(LearnerConfig {
                acceptors: cfg.acceptors.len(),
                proposer: ProposerConfig {
                    client_id: l.swid,
                    proposer_index: id as u16,
                    max_proposers: cfg.learners.len() as u16,
                    acceptors: cfg.acceptors.len(),
                    retransmit_timeout: cfg.timing.retransmit_timeout(),
                    max_retries: cfg.timing.max_retries,
                },
                app: cfg.app,
                responder: id == usize::from(cfg.responder),
                timing: cfg.timing,
            })))
        }
        RoleKind::Proposer => return Err(RuntimeError::NotARole),
    })
}

fn bind(addr: SocketAddr) -> Result<UdpSocket, RuntimeError> {
    let socket = UdpSocket::bind(addr).map_err(|source| RuntimeError::Bind { addr, source })?;
    socket.set_read_timeout(Some(POLL))?;
    Ok(socket)
}

/// A node attached to a socket.
struct Host {
    socket: UdpSocket,
    node: Node,
    coordinators: Vec<SocketAddr>,
    current_coordinator: usize,
    acceptors: Vec<SocketAddr>,
    learners: Vec<SocketAddr>,
    failover_after: u32,
    failover_mark: u32,
    start: Instant,
    rx: u64,
    tx: u64,
    send_errors: u64,
    decode_errors: u64,
    buf: Vec<u8>,
}

impl Host {
    fn new(socket: UdpSocket, node: Node, cfg: &DeploymentConfig) -> Self {
        Host {
            socket,
            node,
            coordinators: cfg.coordinator_addrs(),
            current_coordinator: 0,
            acceptors: cfg.acceptor_addrs(),
            learners: cfg.learner_addrs(),
            failover_after: cfg.failover_after.max(1),
            failover_mark: 0,
            start: Instant::now(),
            rx: 0,
            tx: 0,
            send_errors: 0,
            decode_errors: 0,
            buf: Vec::with_capacity(MAX_DATAGRAM),
        }
    }

    fn now(&self) -> Duration {
        self.start.elapsed()
    }

    fn counters(&self) -> BTreeMap<String, u64> {
        let mut m = self.node.counters();
        m.insert("host.rx_datagrams".into(), self.rx);
        m.insert("host.tx_datagrams".into(), self.tx);
        m.insert("host.send_errors".into(), self.send_errors);
        m.insert("host.decode_errors".into(), self.decode_errors);
        m
    }

    fn resolve(&self, peer: Peer, src: Option<SocketAddr>, targets: &mut Vec<SocketAddr>) {
        match peer {
            Peer::Coordinator => targets.push(self.coordinators[self.current_coordinator]),
            Peer::Acceptors => targets.extend(&self.acceptors),
            Peer::Learners => targets.extend(&self.learners),
            Peer::Requester => {
                if let Some(s) = src.filter(|s| !self.coordinators.contains(s)) {
                    targets.push(s);
                }
            }
            Peer::Client(id) => targets.extend(frame::client_addr(id)),
        }
    }

    fn dispatch(&mut self, out: Outbox, src: Option<SocketAddr>) {
        let mut prev: Option<Packet> = None;
        let mut sent: Vec<SocketAddr> = Vec::new();
        let mut targets = Vec::new();
        for (peer, packet) in out {
            if prev.as_ref() != Some(&packet) {
                sent.clear();
                if frame::encode_packet(&packet, &mut self.buf).is_err() {
                    continue;
                }
            }
            targets.clear();
            self.resolve(peer, src, &mut targets);
            for &t in &targets {
                if sent.contains(&t) {
                    continue;
                }
                sent.push(t);
                match self.socket.send_to(&self.buf, t) {
                    Ok(_) => self.tx += 1,
                    Err(_) => self.send_errors += 1,
                }
            }
            prev = Some(packet);
        }
    }

    fn tick(&mut self) {
        let now = self.now();
        if self.node.next_deadline().is_some_and(|d| d <= now) {
            let mut out = Outbox::new();
            self.node.on_tick(now, &mut out);
            self.dispatch(out, None);
        }
        if let Node::Client(c) = &self.node {
            let t = c.consecutive_timeouts();
            if t == 0 {
                self.failover_mark = 0;
            } else if t >= self.failover_mark + self.failover_after {
                self.failover_mark = t;
                self.current_coordinator = (self.current_coordinator + 1) % self.coordinators.len();
            }
        }
    }

    /// Receives and handles at most one datagram, then runs due timers.
    fn poll(&mut self, rbuf: &mut [u8]) -> Result<(), RuntimeError> {
        match self.socket.recv_from(rbuf) {
            Ok((n, src)) => {
                self.rx += 1;
                match frame::decode(&rbuf[..n]) {
                    Ok(Datagram::Packet(p)) => {
                        let mut out = Outbox::new();
                        let now = self.now();
                        self.node.on_packet(now, p, &mut out);
                        self.dispatch(out, Some(src));
                    }
                    Ok(Datagram::StatsRequest) => {
                        let body = frame::encode_stats(&self.counters());
                        let _ = self.socket.send_to(&body, src);
                    }
                    Ok(Datagram::StatsReply(_)) | Err(_) => self.decode_errors += 1,
                }
            }
            // a signal (e.g. the SIGTERM that stops us) interrupts the wait
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            // ICMP port-unreachable from a dead peer surfaces here on Linux
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => {}
            Err(e) => return Err(e.into()),
        }
        self.tick();
        Ok(())
    }
}

/// Binds the role's socket and serves until `shutdown` is set. Returns the
/// final counters.
pub fn run_role(
    cfg: &DeploymentConfig,
    role: RoleKind,
    id: usize,
    opts: &RoleOptions,
    shutdown: Arc<AtomicBool>,
) -> Result<BTreeMap<String, u64>, RuntimeError> {
    let (host, _) = prepare(cfg, role, id, opts)?;
    serve(host, shutdown)
}

fn prepare(
    cfg: &DeploymentConfig,
    role: RoleKind,
    id: usize,
    opts: &RoleOptions,
) -> Result<(Host, SocketAddr), RuntimeError> {
    let node = build_node(cfg, role, id, opts)?;
    let addr = match opts.listen {
        Some(a) => a,
        None => cfg.addr_of(role, id)?,
    };
    let socket = bind(addr)?;
    let local = socket.local_addr()?;
    Ok((Host::new(socket, node, cfg), local))
}

fn serve(mut host: Host, shutdown: Arc<AtomicBool>) -> Result<BTreeMap<String, u64>, RuntimeError> {
    let mut rbuf = vec![0u8; MAX_DATAGRAM];
    while !shutdown.load(Ordering::Relaxed) {
        host.poll(&mut rbuf)?;
    }
    Ok(host.counters())
}

/// A role served on a background thread.
#[derive(Debug)]
pub struct RoleHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<BTreeMap<String, u64>, RuntimeError>>>,
}

impl RoleHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops the role and returns its final counters.
    pub fn stop(mut self) -> Result<BTreeMap<String, u64>, RuntimeError> {
        self.shutdown.store(true, Ordering::Relaxed);
        self.thread.take().expect("joined once").join().expect("role thread panicked")
    }
}

impl Drop for RoleHandle {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds synchronously (so bind failures surface here) and serves on a
/// new thread.
pub fn spawn_role(
    cfg: &DeploymentConfig,
    role: RoleKind,
    id: usize,
    opts: &RoleOptions,
) -> Result<RoleHandle, RuntimeError> {
    let (host, addr) = prepare(cfg, role, id, opts)?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    let thread = std::thread::Builder::new().name(format!("{role}-{id}")).spawn(move || serve(host, flag))?;
    Ok(RoleHandle { addr, shutdown, thread: Some(thread) })
}

/// Every role in the config except the backup coordinator, each on its own
/// thread.
pub fn spawn_deployment(cfg: &DeploymentConfig) -> Result<Vec<RoleHandle>, RuntimeError> {
    let opts = RoleOptions::default();
    let mut v = vec![spawn_role(cfg, RoleKind::Coordinator, 0, &opts)?];
    for i in 0..cfg.acceptors.len() {
        v.push(spawn_role(cfg, RoleKind::Acceptor, i, &opts)?);
    }
    for i in 0..cfg.learners.len() {
        v.push(spawn_role(cfg, RoleKind::Learner, i, &opts)?);
    }
    Ok(v)
}

/// Load offered by [`run_client`].
#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub concurrency: usize,
    pub messages: u64,
    pub workload: Workload,
    pub seed: u64,
    /// Give up after this long.
    pub deadline: Duration,
    pub keep_replies: bool,
}

#[derive(Debug, Clone)]
pub struct ClientReport {
    pub completed: u64,
    pub failed: u64,
    pub latencies: Vec<Duration>,
    pub replies: Vec<Reply>,
    pub elapsed: Duration,
    pub counters: BTreeMap<String, u64>,
}

impl ClientReport {
    pub fn is_complete(&self, messages: u64) -> bool {
        self.completed == messages && self.failed == 0
    }
}

/// Binds an ephemeral socket on the interface that routes to the
/// coordinator. Its address doubles as the client id.
fn client_socket(cfg: &DeploymentConfig) -> Result<UdpSocket, RuntimeError> {
    let coordinator = cfg.coordinator_addr();
    let probe = UdpSocket::bind(SocketAddr::from(([0, 0, 0, 0], 0)))?;
    probe.connect(coordinator)?;
    let ip = probe.local_addr()?.ip();
    let socket = bind(SocketAddr::new(ip, 0))?;
    Ok(socket)
}

/// Runs a closed-loop client against a deployment until every message is
/// answered or has failed, or until the deadline.
pub fn run_client(cfg: &DeploymentConfig, opts: &ClientOptions) -> Result<ClientReport, RuntimeError> {
    let socket = client_socket(cfg)?;
    let client_id = frame::client_id_of(socket.local_addr()?)
        .ok_or_else(|| RuntimeError::Unreachable("clients need an IPv4 address".into()))?;
    let mut node = ClientNode::new(ClientConfig {
        proposer: ProposerConfig {
            client_id,
            proposer_index: 0,
            max_proposers: 1,
            acceptors: cfg.acceptors.len(),
            retransmit_timeout: cfg.timing.retransmit_timeout(),
            max_retries: cfg.timing.max_retries,
        },
        concurrency: opts.concurrency,
        messages: opts.messages,
        workload: opts.workload.clone(),
        seed: opts.seed,
    });
    node.keep_replies(opts.keep_replies);
    let mut host = Host::new(socket, Node::Client(Box::new(node)), cfg);
    let mut out = Outbox::new();
    host.node.start(host.now(), &mut out);
    host.dispatch(out, None);
    let mut rbuf = vec![0u8; MAX_DATAGRAM];
    let started = Instant::now();
    loop {
        let Node::Client(c) = &host.node else { unreachable!() };
        if c.is_done() || started.elapsed() >= opts.deadline {
            break;
        }
        host.poll(&mut rbuf)?;
    }
    let counters = host.counters();
    let Node::Client(c) = host.node else { unreachable!() };
    Ok(ClientReport {
        completed: c.completed(),
        failed: c.failed(),
        latencies: c.latencies().to_vec(),
        replies: c.replies().to_vec(),
        elapsed: started.elapsed(),
        counters,
    })
}

/// Asks a running role for its counters.
pub fn query_stats(addr: SocketAddr, timeout: Duration) -> Result<BTreeMap<String, u64>, RuntimeError> {
    let socket = UdpSocket::bind(SocketAddr::new(
        if addr.ip().is_loopback() { [127, 0, 0, 1].into() } else { [0, 0, 0, 0].into() },
        0,
    ))?;
    socket.set_read_timeout(Some(Duration::from_millis(100)))?;
    let deadline = Instant::now() + timeout;
    let mut buf = vec![0u8; 65_536];
    while Instant::now() < deadline {
        socket.send_to(&frame::stats_request(), addr)?;
        match socket.recv_from(&mut buf) {
            Ok((n, from)) if from == addr => {
                if let Ok(Datagram::StatsReply(m)) = frame::decode(&buf[..n]) {
                    return Ok(m);
                }
            }
            Ok(_) => {}
            Err(e)
                if matches!(
                    e.kind(),
                    ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::ConnectionRefused | ErrorKind::Interrupted
                ) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Err(RuntimeError::Unreachable(format!("no stats reply from {addr}")))
}

/// Sends a trim command to every acceptor.
pub fn send_trim(cfg: &DeploymentConfig, inst: u32) -> Result<(), RuntimeError> {
    let socket = UdpSocket::bind(SocketAddr::from(([0, 0, 0, 0], 0)))?;
    let mut buf = Vec::new();
    frame::encode_packet(&Packet::Trim(inst), &mut buf).expect("trim frames always encode");
    for a in cfg.acceptor_addrs() {
        socket.send_to(&buf, a)?;
    }
    Ok(())
}
