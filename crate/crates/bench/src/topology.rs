//! The benchmark testbed: both harness endpoints behind their own DEP, with
//! the PASP, AASP and PDP alongside on loopback.

use std::collections::BTreeMap;
use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use rtsabac_core::policy::text::parse_policies;
use rtsabac_core::policy::{Action, Policy, DEFAULT_STATIC_MAX_VALIDITY_MS};
use rtsabac_core::wire::{CrudStatus, Message, Scheme};
use rtsabac_services::config::EndpointConfig;
use rtsabac_services::local::{Topology, TopologySpec, DEP_A};
use rtsabac_services::node::NetError;
use rtsabac_services::Metrics;

use crate::endpoint::{run_benchmark, BenchRun, Passive, PassiveStats, ACTIVE_MAC, ACTIVE_PORT, PASSIVE_MAC, PASSIVE_PORT};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("cannot bind {endpoint} endpoint {addr}: {source}")]
    Bind { endpoint: &'static str, addr: String, source: std::io::Error },
    #[error("{0}")]
    Net(#[from] NetError),
    #[error("services not ready within {0:?}")]
    NotReady(Duration),
    #[error("policy file {path}: {reason}")]
    Policies { path: PathBuf, reason: String },
    #[error("policy '{id}' rejected: {status:?} {details:?}")]
    Rejected { id: String, status: CrudStatus, details: Vec<String> },
    #[error("config {path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error("unknown scheme '{0}'")]
    Scheme(String),
}

fn mac(m: [u8; 6]) -> String {
    m.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(":")
}

/// GRANT policies for probes and their echoes.
pub fn echo_policies(static_validity_ms: u64) -> Vec<Policy> {
    let flow = |dst: [u8; 6], port: u16| {
        format!("eth {{ dst-mac == {} ipv4 {{ udp {{ dst-port == {port} }} }} }}", mac(dst))
            .parse()
            .expect("valid flow")
    };
    vec![
        Policy::new("echo-request", Action::Grant, flow(PASSIVE_MAC, PASSIVE_PORT)).with_validity(static_validity_ms),
        Policy::new("echo-reply", Action::Grant, flow(ACTIVE_MAC, ACTIVE_PORT)).with_validity(static_validity_ms),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_n")]
    pub n: u32,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// `"echo"`, `"none"`, or a path to a policy file.
    #[serde(default = "default_policies")]
    pub policies: String,
    #[serde(default = "default_validity")]
    pub static_validity_ms: u64,
    #[serde(default = "default_endpoint")]
    pub active: String,
    #[serde(default = "default_endpoint")]
    pub passive: String,
    #[serde(default)]
    pub verifier: bool,
    pub out: Option<PathBuf>,
}

fn default_scheme() -> String {
    Scheme::HmacSha512.name().into()
}
fn default_n() -> u32 {
    5000
}
fn default_timeout() -> u64 {
    1000
}
fn default_policies() -> String {
    "echo".into()
}
fn default_validity() -> u64 {
    DEFAULT_STATIC_MAX_VALIDITY_MS
}
fn default_endpoint() -> String {
    "127.0.0.1:0".into()
}

impl Default for TopologyConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl TopologyConfig {
    pub fn load(path: &Path) -> Result<TopologyConfig, BenchError> {
        let bad = |reason: String| BenchError::Config { path: path.to_path_buf(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        toml::from_str(&text).map_err(|e| bad(e.to_string()))
    }

    pub fn scheme(&self) -> Result<Scheme, BenchError> {
        self.scheme.parse().map_err(|_| BenchError::Scheme(self.scheme.clone()))
    }

    /// Policies to install, relative paths resolved against `base`.
    pub fn policy_set(&self, base: &Path) -> Result<Vec<Policy>, BenchError> {
        match self.policies.as_str() {
            "none" => Ok(Vec::new()),
            "echo" => Ok(echo_policies(self.static_validity_ms)),
            file => {
                let path = base.join(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| BenchError::Policies { path: path.clone(), reason: e.to_string() })?;
                parse_policies(&text).map_err(|e| BenchError::Policies { path, reason: e.to_string() })
            }
        }
    }
}

pub struct BenchTopology {
    pub topo: Topology,
    pub active: UdpSocket,
    pub passive: Passive,
}

pub struct TopologyMetrics {
    pub services: BTreeMap<String, Metrics>,
    pub passive: Arc<PassiveStats>,
}

fn bind(endpoint: &'static str, addr: &str) -> Result<UdpSocket, BenchError> {
    UdpSocket::bind(addr).map_err(|source| BenchError::Bind { endpoint, addr: addr.to_string(), source })
}

impl BenchTopology {
    /// Starts the services with the endpoints bound to `active` and
    /// `passive`; `tweak` adjusts the topology before launch.
    pub fn start(
        scheme: Scheme,
        active: &str,
        passive: &str,
        tweak: impl FnOnce(&mut TopologySpec),
    ) -> Result<BenchTopology, BenchError> {
        Self::start_with(scheme, active, passive, false, tweak)
    }

    /// [`BenchTopology::start`] with the passive entity optionally
    /// recording what it receives.
    pub fn start_with(
        scheme: Scheme,
        active: &str,
        passive: &str,
        record: bool,
        tweak: impl FnOnce(&mut TopologySpec),
    ) -> Result<BenchTopology, BenchError> {
        let active = bind("active", active)?;
        let passive_sock = bind("passive", passive)?;
        let io = |source| BenchError::Bind { endpoint: "passive", addr: passive.to_string(), source };
        let mut spec = TopologySpec::new(
            scheme,
            active.local_addr().map_err(io)?,
            passive_sock.local_addr().map_err(io)?,
        );
        spec.protect_a = EndpointConfig { mac: Some(mac(ACTIVE_MAC)), ip: None, port: None };
        spec.protect_b = EndpointConfig { mac: Some(mac(PASSIVE_MAC)), ip: None, port: None };
        tweak(&mut spec);
        let passive = Passive::spawn_with(passive_sock, record).map_err(io)?;
        let topo = Topology::start(&spec)?;
        let ready = Duration::from_secs(10);
        if !topo.wait_ready(ready) {
            topo.shutdown();
            return Err(BenchError::NotReady(ready));
        }
        Ok(BenchTopology { topo, active, passive })
    }

    pub fn install(&self, policies: &[Policy]) -> Result<(), BenchError> {
        for p in policies {
            match self.topo.add_policy(p.clone())? {
                Message::PolicyCrudResponse { status: CrudStatus::Ok, .. } => {}
                Message::PolicyCrudResponse { status, details, .. } => {
                    return Err(BenchError::Rejected { id: p.id.clone(), status, details })
                }
                _ => return Err(NetError::Unexpected("crud reply").into()),
            }
        }
        Ok(())
    }

    /// Address the active endpoint sends probes to.
    pub fn target(&self) -> SocketAddr {
        self.topo.device(DEP_A)
    }

    pub fn run(&self, n: u32, timeout: Duration) -> BenchRun {
        run_benchmark(&self.active, self.target(), n, timeout)
    }

    pub fn shutdown(self) -> TopologyMetrics {
        let passive = self.passive.stop();
        TopologyMetrics { services: self.topo.shutdown(), passive }
    }
}

/// Starts the testbed described by `cfg` and installs its policy set.
pub fn run_topology(cfg: &TopologyConfig, base: &Path) -> Result<BenchTopology, BenchError> {
    let policies = cfg.policy_set(base)?;
    let t = BenchTopology::start(cfg.scheme()?, &cfg.active, &cfg.passive, |s| s.verifier = cfg.verifier)?;
    if let Err(e) = t.install(&policies) {
        t.shutdown();
        return Err(e);
    }
    Ok(t)
}
