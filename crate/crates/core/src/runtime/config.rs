use std::collections::HashSet;
use std::net::SocketAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::apps::AppKind;
use crate::node::{RoleKind, Timing};

use super::RuntimeError;

pub const COORDINATOR_PORT: u16 = 8888;
pub const BACKUP_COORDINATOR_PORT: u16 = 8889;
pub const ACCEPTOR_BASE_PORT: u16 = 8890;
pub const LEARNER_BASE_PORT: u16 = 8900;

/// Environment variable that overrides the listen address of the role being
/// started. Peers keep using the address from the config file.
pub const LISTEN_ENV: &str = "CAANS_LISTEN";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub swid: u64,
    /// Defaults to loopback on the role's default port.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listen: Option<SocketAddr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackupEndpoint {
    pub swid: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listen: Option<SocketAddr>,
    /// First instance the backup assigns when it takes over.
    #[serde(default)]
    pub start_inst: u32,
}

fn default_capacity() -> usize {
    65_536
}

fn default_failover_after() -> u32 {
    3
}

fn default_timing() -> Timing {
    Timing::udp()
}

/// Shared deployment description read by every role process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentConfig {
    pub f: u16,
    #[serde(default = "default_capacity")]
    pub acceptor_capacity: usize,
    #[serde(default)]
    pub start_inst: u32,
    #[serde(default)]
    pub app: AppKind,
    /// Index of the learner whose replica answers clients.
    #[serde(default)]
    pub responder: u16,
    #[serde(default = "default_timing")]
    pub timing: Timing,
    /// Unanswered retransmission rounds after which clients switch to the
    /// backup coordinator.
    #[serde(default = "default_failover_after")]
    pub failover_after: u32,
    pub coordinator: Endpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backup_coordinator: Option<BackupEndpoint>,
    pub acceptors: Vec<Endpoint>,
    pub learners: Vec<Endpoint>,
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> RuntimeError {
    RuntimeError::Validation { path: path.into(), message: message.into() }
}

impl DeploymentConfig {
    /// Loopback deployment on the default ports.
    pub fn local(f: u16, learners: u16) -> Self {
        let n = 2 * f + 1;
        DeploymentConfig {
            f,
            acceptor_capacity: default_capacity(),
            start_inst: 0,
            app: AppKind::Echo,
            responder: 0,
            timing: Timing::udp(),
            failover_after: default_failover_after(),
            coordinator: Endpoint { swid: 0x1000, listen: None },
            backup_coordinator: Some(BackupEndpoint { swid: 0x1001, listen: None, start_inst: 0 }),
            acceptors: (0..n).map(|i| Endpoint { swid: 0x2000 + u64::from(i), listen: None }).collect(),
            learners: (0..learners).map(|i| Endpoint { swid: 0x3000 + u64::from(i), listen: None }).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, RuntimeError> {
        let cfg: DeploymentConfig = serde_json::from_str(text).map_err(|e| RuntimeError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn quorum(&self) -> usize {
        usize::from(self.f) + 1
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        let n = 2 * usize::from(self.f) + 1;
        if self.acceptors.len() != n {
            return Err(invalid("acceptors", format!("{} entries, but f={} needs {n}", self.acceptors.len(), self.f)));
        }
        if self.learners.is_empty() {
            return Err(invalid("learners", "at least one learner is required"));
        }
        if usize::from(self.responder) >= self.learners.len() {
            return Err(invalid("responder", format!("no learner with index {}", self.responder)));
        }
        if self.acceptor_capacity == 0 {
            return Err(invalid("acceptor_capacity", "must be positive"));
        }
        let mut swids = HashSet::new();
        let mut addrs = HashSet::new();
        for (path, swid, addr) in self.roles() {
            if !swids.insert(swid) {
                return Err(invalid(format!("{path}.swid"), format!("duplicate swid {swid}")));
            }
            if !addrs.insert(addr) {
                return Err(invalid(format!("{path}.listen"), format!("duplicate address {addr}")));
            }
        }
        Ok(())
    }

    fn roles(&self) -> Vec<(String, u64, SocketAddr)> {
        let mut v = vec![("coordinator".to_string(), self.coordinator.swid, self.coordinator_addr())];
        if let (Some(b), Some(addr)) = (&self.backup_coordinator, self.backup_addr()) {
            v.push(("backup_coordinator".into(), b.swid, addr));
        }
        for (i, a) in self.acceptors.iter().enumerate() {
            v.push((format!("acceptors[{i}]"), a.swid, self.acceptor_addr(i)));
        }
        for (i, l) in self.learners.iter().enumerate() {
            v.push((format!("learners[{i}]"), l.swid, self.learner_addr(i)));
        }
        v
    }

    pub fn coordinator_addr(&self) -> SocketAddr {
        self.coordinator.listen.unwrap_or_else(|| loopback(COORDINATOR_PORT))
    }

    pub fn backup_addr(&self) -> Option<SocketAddr> {
        self.backup_coordinator.as_ref().map(|b| b.listen.unwrap_or_else(|| loopback(BACKUP_COORDINATOR_PORT)))
    }

    /// Primary first, then the backup if configured.
    pub fn coordinator_addrs(&self) -> Vec<SocketAddr> {
        let mut v = vec![self.coordinator_addr()];
        v.extend(self.backup_addr());
        v
    }

    pub fn acceptor_addr(&self, i: usize) -> SocketAddr {
        self.acceptors[i].listen.unwrap_or_else(|| loopback(ACCEPTOR_BASE_PORT + i as u16))
    }

    pub fn learner_addr(&self, i: usize) -> SocketAddr {
        self.learners[i].listen.unwrap_or_else(|| loopback(LEARNER_BASE_PORT + i as u16))
    }

    pub fn acceptor_addrs(&self) -> Vec<SocketAddr> {
        (0..self.acceptors.len()).map(|i| self.acceptor_addr(i)).collect()
    }

    pub fn learner_addrs(&self) -> Vec<SocketAddr> {
        (0..self.learners.len()).map(|i| self.learner_addr(i)).collect()
    }

    /// Configured address of a role. Coordinator id 1 is the backup.
    pub fn addr_of(&self, role: RoleKind, id: usize) -> Result<SocketAddr, RuntimeError> {
        let missing = || RuntimeError::UnknownRole(format!("{role}:{id}"));
        match role {
            RoleKind::Coordinator => match id {
                0 => Ok(self.coordinator_addr()),
                1 => self.backup_addr().ok_or_else(missing),
                _ => Err(missing()),
            },
            RoleKind::Acceptor if id < self.acceptors.len() => Ok(self.acceptor_addr(id)),
            RoleKind::Learner if id < self.learners.len() => Ok(self.learner_addr(id)),
            _ => Err(missing()),
        }
    }

    /// Rewrites every role onto loopback ports starting at `base`, in the
    /// order coordinator, backup, acceptors, learners.
    pub fn with_ports_from(mut self, base: u16) -> Self {
        let mut port = base;
        let mut next = || {
            let p = port;
            port += 1;
            Some(loopback(p))
        };
        self.coordinator.listen = next();
        if let Some(b) = &mut self.backup_coordinator {
            b.listen = next();
        }
        for a in &mut self.acceptors {
            a.listen = next();
        }
        for l in &mut self.learners {
            l.listen = next();
        }
        self
    }
}

fn loopback(port: u16) -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], port))
}

pub fn load_config(path: impl AsRef<Path>) -> Result<DeploymentConfig, RuntimeError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| RuntimeError::Parse(format!("{}: {e}", path.display())))?;
    DeploymentConfig::from_json(&text)
}
