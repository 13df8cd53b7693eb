//! Closed-loop workload harness: N logical clients, each submitting a value
//! and resubmitting as soon as its reply arrives.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apps::AppKind;
use crate::client::Envelope;
use crate::node::Workload;
use crate::runtime::{self, ClientOptions, DeploymentConfig, RuntimeError};
use crate::simnet::{RoleId, SimConfig, SimError, Simulation, Until};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no samples")]
    Empty,
    #[error("deployment unreachable: {0}")]
    DeploymentUnreachable(String),
    #[error("run {run} incomplete: {completed} of {expected} answered, {failed} failed")]
    IncompleteRun { run: u32, completed: u64, failed: u64, expected: u64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Runtime(RuntimeError),
    #[error("bad deployment file: {0}")]
    Deployment(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Echo,
    /// 50/50 GET/PUT against the replicated store.
    Kv,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "echo" => Ok(Mode::Echo),
            "kv" => Ok(Mode::Kv),
            other => Err(format!("unknown mode `{other}` (expected echo or kv)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadParams {
    pub clients: usize,
    /// Submissions per run, shared by all clients.
    pub messages: u64,
    pub value_size: usize,
    pub mode: Mode,
    pub runs: u32,
    pub seed: u64,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams { clients: 1, messages: 1000, value_size: 64, mode: Mode::Echo, runs: 3, seed: 0 }
    }
}

/// Keys used by the KV mode.
pub const KV_KEYS: u32 = 128;

impl WorkloadParams {
    fn workload(&self) -> Workload {
        match self.mode {
            Mode::Echo => Workload::Echo { value_size: self.value_size },
            Mode::Kv => Workload::KvMixed { value_size: self.value_size, keys: KV_KEYS },
        }
    }

    fn app(&self) -> AppKind {
        match self.mode {
            Mode::Echo => AppKind::Echo,
            Mode::Kv => AppKind::Kv,
        }
    }
}

/// Latency table in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (zero for a single sample).
    pub std: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub min: f64,
    pub max: f64,
}

/// Nearest-rank percentile of sorted data: the smallest value with at least
/// `p` percent of the samples at or below it.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarize(samples: &[f64]) -> Result<Summary, BenchError> {
    if samples.is_empty() {
        return Err(BenchError::Empty);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let std = if sorted.len() > 1 {
        (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        count: sorted.len(),
        mean,
        std,
        p50: nearest_rank(&sorted, 50.0),
        p95: nearest_rank(&sorted, 95.0),
        p99: nearest_rank(&sorted, 99.0),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    })
}

fn micros(d: &[Duration]) -> Vec<f64> {
    d.iter().map(|x| x.as_secs_f64() * 1e6).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub clients: usize,
    pub run: u32,
    /// Application deliveries per second at the responding learner.
    pub throughput: f64,
    pub latency: Summary,
    /// Final counters per role, keyed like `acceptor:0`.
    pub counters: BTreeMap<String, BTreeMap<String, u64>>,
}

/// Where a workload runs.
#[derive(Debug, Clone)]
pub enum Deployment {
    Sim(Box<SimConfig>),
    Runtime(Box<DeploymentConfig>),
}

impl Deployment {
    /// Reads either a simulation config (it has a `topology` key) or a
    /// UDP deployment config.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| BenchError::Deployment(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| BenchError::Deployment(e.to_string()))?;
        if value.get("topology").is_some() {
            Ok(Deployment::Sim(Box::new(SimConfig::from_json(&text)?)))
        } else {
            DeploymentConfig::from_json(&text)
                .map(|c| Deployment::Runtime(Box::new(c)))
                .map_err(|e| BenchError::Deployment(e.to_string()))
        }
    }
}

pub fn run_workload(params: &WorkloadParams, deployment: &Deployment) -> Result<Vec<RunStats>, BenchError> {
    (0..params.runs)
        .map(|run| match deployment {
            Deployment::Sim(cfg) => run_sim(params, cfg, run),
            Deployment::Runtime(cfg) => run_udp(params, cfg, run),
        })
        .collect()
}

fn run_sim(params: &WorkloadParams, base: &SimConfig, run: u32) -> Result<RunStats, BenchError> {
    let mut cfg = base.clone();
    cfg.topology.proposers = 1;
    cfg.workload.concurrency = params.clients;
    cfg.workload.messages = params.messages;
    cfg.workload.workload = params.workload();
    cfg.app = params.app();
    cfg.seed = params.seed.wrapping_add(u64::from(run));
    let mut sim = Simulation::build(cfg)?;
    sim.run(Until::Quiescence);
    let client = sim.client(0).expect("one proposer");
    if client.completed() != params.messages || client.failed() > 0 {
        return Err(BenchError::IncompleteRun {
            run,
            completed: client.completed(),
            failed: client.failed(),
            expected: params.messages,
        });
    }
    let responder = sim.config().topology.responder;
    let learner = sim.learner(responder).expect("responder exists");
    // clients all start at time zero
    let span = learner
        .deliveries()
        .iter()
        .rev()
        .find(|d| Envelope::decode(&d.value).is_some_and(|e| !e.is_noop()))
        .map_or(Duration::ZERO, |d| d.time);
    let throughput = if span.is_zero() { 0.0 } else { learner.replica().applied().len() as f64 / span.as_secs_f64() };
    let latency = summarize(&micros(client.latencies()))?;
    let counters = sim.trace().roles.into_iter().map(|r| (r.id.to_string(), r.counters)).collect();
    Ok(RunStats { clients: params.clients, run, throughput, latency, counters })
}

fn stats_of(addr: std::net::SocketAddr) -> Result<BTreeMap<String, u64>, BenchError> {
    runtime::query_stats(addr, Duration::from_secs(1)).map_err(|e| BenchError::DeploymentUnreachable(e.to_string()))
}

fn run_udp(params: &WorkloadParams, cfg: &DeploymentConfig, run: u32) -> Result<RunStats, BenchError> {
    let responder = cfg.learner_addr(usize::from(cfg.responder));
    let before = stats_of(responder)?;
    let opts = ClientOptions {
        concurrency: params.clients,
        messages: params.messages,
        workload: params.workload(),
        seed: params.seed.wrapping_add(u64::from(run)),
        deadline: Duration::from_secs(120),
        keep_replies: false,
    };
    let report = runtime::run_client(cfg, &opts).map_err(BenchError::Runtime)?;
    if !report.is_complete(params.messages) {
        return Err(BenchError::IncompleteRun {
            run,
            completed: report.completed,
            failed: report.failed,
            expected: params.messages,
        });
    }
    let after = stats_of(responder)?;
    let applied = after.get("applied").copied().unwrap_or(0) - before.get("applied").copied().unwrap_or(0);
    let throughput = applied as f64 / report.elapsed.as_secs_f64();
    let mut counters = BTreeMap::new();
    counters.insert(RoleId::proposer(0).to_string(), report.counters.clone());
    let mut roles = vec![(RoleId::coordinator(0), cfg.coordinator_addr())];
    roles.extend((0..cfg.acceptors.len()).map(|i| (RoleId::acceptor(i as u16), cfg.acceptor_addr(i))));
    roles.extend((0..cfg.learners.len()).map(|i| (RoleId::learner(i as u16), cfg.learner_addr(i))));
    for (id, addr) in roles {
        if let Ok(m) = runtime::query_stats(addr, Duration::from_millis(300)) {
            counters.insert(id.to_string(), m);
        }
    }
    Ok(RunStats { clients: params.clients, run, throughput, latency: summarize(&micros(&report.latencies))?, counters })
}

/// Column order of the stats CSV.
pub const CSV_HEADER: [&str; 8] = ["N", "run", "throughput", "mean_us", "std_us", "p50", "p95", "p99"];

pub fn write_csv<W: Write>(rows: &[RunStats], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.clients.to_string(),
            r.run.to_string(),
            format!("{:.1}", r.throughput),
            format!("{:.2}", r.latency.mean),
            format!("{:.2}", r.latency.std),
            format!("{:.2}", r.latency.p50),
            format!("{:.2}", r.latency.p95),
            format!("{:.2}", r.latency.p99),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Parses `a..b` (inclusive) or a single number.
pub fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<usize>, String> {
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
        None => {
            let v = parse(s)?;
            (v, v)
        }
    };
    if lo == 0 || lo > hi {
        return Err(format!("`{s}` is not a non-empty range of positive counts"));
    }
    Ok(lo..=hi)
}
