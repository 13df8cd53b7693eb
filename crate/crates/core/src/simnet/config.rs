use serde::{Deserialize, Serialize};

use crate::apps::AppKind;
use crate::node::{RoleKind, Timing, Workload};

use super::SimError;

/// A role instance, e.g. `{"role": "acceptor", "index": 2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RoleId {
    pub role: RoleKind,
    pub index: u16,
}

impl RoleId {
    pub const fn new(role: RoleKind, index: u16) -> Self {
        RoleId { role, index }
    }

    pub const fn proposer(index: u16) -> Self {
        RoleId::new(RoleKind::Proposer, index)
    }

    pub const fn coordinator(index: u16) -> Self {
        RoleId::new(RoleKind::Coordinator, index)
    }

    pub const fn acceptor(index: u16) -> Self {
        RoleId::new(RoleKind::Acceptor, index)
    }

    pub const fn learner(index: u16) -> Self {
        RoleId::new(RoleKind::Learner, index)
    }
}

impl std::fmt::Display for RoleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.role, self.index)
    }
}

/// Role placement. Coordinator 0 is the primary; coordinator 1, when
/// `backup_coordinator` is set, is a standby started by a fault event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub proposers: u16,
    pub f: u16,
    pub acceptors: u16,
    pub learners: u16,
    #[serde(default)]
    pub backup_coordinator: bool,
    /// Learner that answers clients.
    #[serde(default)]
    pub responder: u16,
}

impl Topology {
    /// One proposer, one coordinator, three acceptors, two learners.
    pub fn standard() -> Self {
        Topology { proposers: 1, f: 1, acceptors: 3, learners: 2, backup_coordinator: false, responder: 0 }
    }

    pub fn quorum(&self) -> usize {
        usize::from(self.f) + 1
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if u32::from(self.acceptors) != 2 * u32::from(self.f) + 1 {
            return Err(SimError::BadTopology(format!(
                "{} acceptors cannot tolerate f={} (need 2f+1)",
                self.acceptors, self.f
            )));
        }
        if self.learners == 0 {
            return Err(SimError::BadTopology("at least one learner is required".into()));
        }
        if self.responder >= self.learners {
            return Err(SimError::BadTopology(format!("responder learner:{} does not exist", self.responder)));
        }
        Ok(())
    }

    pub fn contains(&self, id: RoleId) -> bool {
        let count = match id.role {
            RoleKind::Proposer => self.proposers,
            RoleKind::Coordinator => 1 + u16::from(self.backup_coordinator),
            RoleKind::Acceptor => self.acceptors,
            RoleKind::Learner => self.learners,
        };
        id.index < count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Jitter {
    #[default]
    None,
    Uniform {
        max_us: u64,
    },
    Exponential {
        mean_us: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkParams {
    pub base_latency_us: u64,
    pub jitter: Jitter,
    pub drop_prob: f64,
    pub dup_prob: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams { base_latency_us: 50, jitter: Jitter::None, drop_prob: 0.0, dup_prob: 0.0 }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, p) in [("drop_prob", self.drop_prob), ("dup_prob", self.dup_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::BadTopology(format!("{name}={p} is not a probability")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkOverride {
    pub src: RoleId,
    pub dst: RoleId,
    pub params: LinkParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LinkConfig {
    pub default: LinkParams,
    pub overrides: Vec<LinkOverride>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum FaultAction {
    KillRole,
    ReviveRole,
    StartBackupCoordinator { start_inst: u32 },
    Trim { inst: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub time_us: u64,
    #[serde(flatten)]
    pub action: FaultAction,
    pub target: RoleId,
}

impl FaultEvent {
    pub fn new(time_us: u64, action: FaultAction, target: RoleId) -> Self {
        FaultEvent { time_us, action, target }
    }
}

/// Per-role processing cost. Zero means a role handles messages instantly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ServiceTimes {
    pub proposer_us: u64,
    pub coordinator_us: u64,
    pub acceptor_us: u64,
    pub learner_us: u64,
}

impl ServiceTimes {
    pub fn for_role(&self, role: RoleKind) -> u64 {
        match role {
            RoleKind::Proposer => self.proposer_us,
            RoleKind::Coordinator => self.coordinator_us,
            RoleKind::Acceptor => self.acceptor_us,
            RoleKind::Learner => self.learner_us,
        }
    }
}

/// Load offered by each proposer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimWorkload {
    /// Closed-loop clients per proposer.
    pub concurrency: usize,
    /// Submissions per proposer.
    pub messages: u64,
    #[serde(flatten)]
    pub workload: Workload,
}

impl Default for SimWorkload {
    fn default() -> Self {
        SimWorkload { concurrency: 1, messages: 100, workload: Workload::Echo { value_size: 16 } }
    }
}

fn default_capacity() -> usize {
    4096
}

/// Everything a simulation run is a function of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub topology: Topology,
    #[serde(default)]
    pub links: LinkConfig,
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workload: SimWorkload,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default = "default_capacity")]
    pub acceptor_capacity: usize,
    #[serde(default)]
    pub app: AppKind,
    #[serde(default)]
    pub service_time: ServiceTimes,
    /// Hard stop for runs that never quiesce.
    #[serde(default)]
    pub max_time_us: Option<u64>,
    #[serde(default)]
    pub record_trace: bool,
}

impl SimConfig {
    pub fn new(topology: Topology) -> Self {
        SimConfig {
            topology,
            links: LinkConfig::default(),
            faults: Vec::new(),
            seed: 0,
            workload: SimWorkload::default(),
            timing: Timing::sim(),
            acceptor_capacity: default_capacity(),
            app: AppKind::Echo,
            service_time: ServiceTimes::default(),
            max_time_us: None,
            record_trace: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.topology.validate()?;
        self.links.default.validate()?;
        for o in &self.links.overrides {
            for end in [o.src, o.dst] {
                if !self.topology.contains(end) {
                    return Err(SimError::BadTopology(format!("link endpoint {end} is not in the topology")));
                }
            }
            o.params.validate()?;
        }
        for f in &self.faults {
            if !self.topology.contains(f.target) {
                return Err(SimError::BadTopology(format!("fault target {} is not in the topology", f.target)));
            }
        }
        if self.acceptor_capacity == 0 {
            return Err(SimError::BadTopology("acceptor capacity must be positive".into()));
        }
        Ok(())
    }
}
