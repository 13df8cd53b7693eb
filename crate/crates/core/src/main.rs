use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use caans::apps::{decode_response, KvOp, KvStatus};
use caans::bench::{self, Deployment, Mode, WorkloadParams};
use caans::node::{RoleKind, Workload};
use caans::runtime::{self, load_config, ClientOptions, RoleOptions};
use caans::simnet::{SimConfig, Simulation, Until};

#[derive(Parser)]
#[command(name = "caans", version, about = "Paxos with pipeline-style coordinator and acceptors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    messages: u64,
    #[arg(long, default_value_t = 64)]
    value_size: usize,
    #[arg(long, default_value = "echo")]
    mode: Mode,
    /// Simulation or UDP deployment config.
    #[arg(long)]
    deployment: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    runs: u32,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Serve one role of a UDP deployment until SIGTERM.
    Run {
        #[arg(long)]
        role: RoleKind,
        #[arg(long)]
        id: usize,
        #[arg(long)]
        config: PathBuf,
        /// First instance for a coordinator (overrides the config).
        #[arg(long)]
        start_inst: Option<u32>,
    },
    /// Talk to the replicated key-value store.
    Kv {
        #[command(subcommand)]
        op: KvCommand,
        #[arg(long, global = true)]
        config: Option<PathBuf>,
    },
    /// Closed-loop benchmark at one client count.
    Bench {
        #[arg(long, default_value_t = 1)]
        clients: usize,
        #[command(flatten)]
        args: BenchArgs,
    },
    /// Closed-loop benchmark over a range of client counts, e.g. `1..22`.
    BenchSweep {
        #[arg(long, default_value = "1..22", value_parser = bench::parse_range)]
        clients: std::ops::RangeInclusive<usize>,
        #[command(flatten)]
        args: BenchArgs,
    },
    /// Run a simulation config and print its summary record.
    Sim {
        #[arg(long)]
        config: PathBuf,
        /// Write the event log as line-delimited JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Print a running role's counters.
    Stats {
        #[arg(long)]
        role: RoleKind,
        #[arg(long)]
        id: usize,
        #[arg(long)]
        config: PathBuf,
    },
    /// Tell every acceptor to stop serving instances up to `inst`.
    Trim {
        #[arg(long)]
        inst: u32,
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum KvCommand {
    Put { key: String, value: String },
    Get { key: String },
    Del { key: String },
}

fn print_counters(counters: &BTreeMap<String, u64>) -> io::Result<()> {
    let mut out = io::stdout().lock();
    for (k, v) in counters {
        writeln!(out, "{k} {v}")?;
    }
    out.flush()
}

fn run_role(role: RoleKind, id: usize, config: PathBuf, start_inst: Option<u32>) -> Result<()> {
    let cfg = load_config(&config)?;
    let mut opts = RoleOptions::from_env()?;
    opts.start_inst = start_inst;
    let shutdown = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, shutdown.clone())?;
    }
    let counters = runtime::run_role(&cfg, role, id, &opts, shutdown)?;
    print_counters(&counters)?;
    Ok(())
}

fn run_kv(op: KvCommand, config: Option<PathBuf>) -> Result<()> {
    let Some(config) = config else {
        bail!("--config is required");
    };
    let cfg = load_config(&config)?;
    let op = match op {
        KvCommand::Put { key, value } => KvOp::put(key.into_bytes(), value.into_bytes()),
        KvCommand::Get { key } => KvOp::get(key.into_bytes()),
        KvCommand::Del { key } => KvOp::del(key.into_bytes()),
    };
    let payload = op.encode()?;
    let wait = cfg.timing.retransmit_timeout() * (cfg.timing.max_retries + 1);
    let report = runtime::run_client(
        &cfg,
        &ClientOptions {
            concurrency: 1,
            messages: 1,
            workload: Workload::Script { payloads: vec![payload.to_vec()] },
            seed: 0,
            deadline: wait + Duration::from_secs(1),
            keep_replies: true,
        },
    )?;
    let Some(reply) = report.replies.first() else {
        bail!("no reply from the deployment");
    };
    let (status, value) = decode_response(&reply.payload).context("malformed reply")?;
    match status {
        KvStatus::Ok if value.is_empty() => println!("OK"),
        KvStatus::Ok => println!("{}", String::from_utf8_lossy(&value)),
        KvStatus::NotFound => println!("NOT_FOUND"),
        KvStatus::Malformed => bail!("the store rejected the request"),
    }
    Ok(())
}

fn run_bench(clients: impl IntoIterator<Item = usize>, args: BenchArgs) -> Result<()> {
    let deployment = Deployment::load(&args.deployment)?;
    let mut rows = Vec::new();
    for n in clients {
        let params = WorkloadParams {
            clients: n,
            messages: args.messages,
            value_size: args.value_size,
            mode: args.mode,
            runs: args.runs,
            seed: args.seed,
        };
        let stats = bench::run_workload(&params, &deployment)?;
        for s in &stats {
            eprintln!(
                "N={} run={} throughput={:.0}/s mean={:.1}us p99={:.1}us",
                s.clients, s.run, s.throughput, s.latency.mean, s.latency.p99
            );
        }
        rows.extend(stats);
    }
    match args.out {
        Some(path) => bench::write_csv(&rows, File::create(&path).with_context(|| path.display().to_string())?)?,
        None => bench::write_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn run_sim(config: PathBuf, trace: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(&config).with_context(|| config.display().to_string())?;
    let mut cfg = SimConfig::from_json(&text)?;
    cfg.record_trace |= trace.is_some();
    let mut sim = Simulation::build(cfg)?;
    sim.run(Until::Quiescence);
    let violations = sim.agreement_violations();
    let report = sim.into_trace();
    if let Some(path) = trace {
        let file = File::create(&path).with_context(|| path.display().to_string())?;
        report.write_events(io::BufWriter::new(file))?;
    }
    report.write_summary(io::stdout().lock())?;
    if !violations.is_empty() {
        bail!("learners disagree on instances {violations:?}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { role, id, config, start_inst } => run_role(role, id, config, start_inst),
        Command::Kv { op, config } => run_kv(op, config),
        Command::Bench { clients, args } => run_bench([clients], args),
        Command::BenchSweep { clients, args } => run_bench(clients, args),
        Command::Sim { config, trace } => run_sim(config, trace),
        Command::Stats { role, id, config } => (|| {
            let cfg = load_config(&config)?;
            let counters = runtime::query_stats(cfg.addr_of(role, id)?, Duration::from_secs(2))?;
            print_counters(&counters)?;
            Ok(())
        })(),
        Command::Trim { inst, config } => {
            load_config(&config).and_then(|cfg| runtime::send_trim(&cfg, inst)).map_err(Into::into)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
