//! A complete loopback deployment: PASP, AASP, PDP (plus an optional
//! verifier PDP) and two DEPs, each protecting one device socket.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rtsabac_core::policy::Policy;
use rtsabac_core::wire::{CrudOp, Ed25519Authenticator, Message, Scheme};

use crate::config::{
    AaspConfig, AttributeConfig, BypassConfig, DepConfig, EndpointConfig, NodeConfig, PaspConfig, PdpConfig, PeerConfig,
};
use crate::node::{ping, NetError, Node};
use crate::service::{Metrics, ServiceHandle, Sockets};
use crate::Role;

pub const ADMIN: &str = "admin";
pub const PASP: &str = "pasp";
pub const AASP: &str = "aasp";
pub const PDP: &str = "pdp";
pub const VERIFIER: &str = "pdp-verifier";
pub const DEP_A: &str = "dep-a";
pub const DEP_B: &str = "dep-b";

#[derive(Debug, Clone)]
pub struct TopologySpec {
    pub scheme: Scheme,
    pub attributes: Vec<AttributeConfig>,
    pub values_file: Option<PathBuf>,
    pub bypass: Vec<BypassConfig>,
    pub verifier: bool,
    pub fail_open: bool,
    /// Device sockets behind dep-a and dep-b, with the addresses they use.
    pub device_a: SocketAddr,
    pub device_b: SocketAddr,
    pub protect_a: EndpointConfig,
    pub protect_b: EndpointConfig,
    pub freshness_ms: u64,
}

impl TopologySpec {
    pub fn new(scheme: Scheme, device_a: SocketAddr, device_b: SocketAddr) -> Self {
        TopologySpec {
            scheme,
            attributes: Vec::new(),
            values_file: None,
            bypass: Vec::new(),
            verifier: false,
            fail_open: false,
            device_a,
            device_b,
            protect_a: EndpointConfig::default(),
            protect_b: EndpointConfig::default(),
            freshness_ms: crate::config::NodeConfig::new("x").freshness_ms,
        }
    }
}

/// Per-node secret for Ed25519 topologies.
fn seed(index: usize) -> [u8; 32] {
    let mut s = [0u8; 32];
    for (i, b) in s.iter_mut().enumerate() {
        *b = (index as u8).wrapping_mul(37).wrapping_add(i as u8).wrapping_add(1);
    }
    s
}

pub struct Topology {
    pub services: BTreeMap<String, ServiceHandle>,
    pub configs: BTreeMap<String, NodeConfig>,
    admin: Node,
}

impl Topology {
    pub fn start(spec: &TopologySpec) -> Result<Topology, NetError> {
        let mut ids = vec![PASP, AASP, PDP, DEP_A, DEP_B];
        if spec.verifier {
            ids.insert(3, VERIFIER);
        }
        let mut sockets: BTreeMap<&str, Sockets> = BTreeMap::new();
        for id in &ids {
            sockets.insert(id, Sockets::local(id.starts_with("dep"))?);
        }
        let mut all = ids.clone();
        all.push(ADMIN);
        let index = |id: &str| all.iter().position(|x| *x == id).expect("known id");

        let mut peers = BTreeMap::new();
        for id in &all {
            let s = sockets.get(id);
            let mut p = PeerConfig {
                control: s.map(|s| s.control_addr().to_string()),
                data: s.and_then(|s| s.data_addr()).map(|a| a.to_string()),
                ..Default::default()
            };
            if spec.scheme == Scheme::Ed25519 {
                let public = Ed25519Authenticator::from_secret(&seed(index(id))).public_key();
                p.public = Some(format!("hex:{}", hex::encode(public)));
            }
            match *id {
                DEP_A => p.protects = vec![spec.protect_a.clone()],
                DEP_B => p.protects = vec![spec.protect_b.clone()],
                _ => {}
            }
            peers.insert(id.to_string(), p);
        }

        let config = |id: &str| {
            let mut c = NodeConfig::new(id);
            c.scheme = spec.scheme.name().to_string();
            c.freshness_ms = spec.freshness_ms;
            c.attributes = spec.attributes.clone();
            match spec.scheme {
                Scheme::HmacSha512 => c.key = Some("text:local-topology-key".into()),
                Scheme::Ed25519 => c.secret = Some(format!("hex:{}", hex::encode(seed(index(id))))),
                Scheme::Noop => {}
            }
            c.peers = peers.iter().filter(|(p, _)| p.as_str() != id).map(|(k, v)| (k.clone(), v.clone())).collect();
            if let Some(s) = sockets.get(id) {
                c.control = s.control_addr().to_string();
            }
            c
        };

        let mut configs = BTreeMap::new();
        for id in &all {
            let mut c = config(id);
            match *id {
                PASP => {
                    let mut pdps = vec![PDP.to_string()];
                    if spec.verifier {
                        pdps.push(VERIFIER.to_string());
                    }
                    c.pasp = Some(PaspConfig { pdps, ..Default::default() });
                }
                AASP => c.aasp = Some(AaspConfig { values_file: spec.values_file.clone() }),
                PDP | VERIFIER => {
                    c.pdp = Some(PdpConfig {
                        pasp: PASP.into(),
                        aasp: AASP.into(),
                        error_retry_ms: 1000,
                        default_deny_ttl_ms: 5000,
                        cache_margin_ms: 100,
                    })
                }
                DEP_A | DEP_B => {
                    let s = &sockets[id];
                    let device_peer = if *id == DEP_A { spec.device_a } else { spec.device_b };
                    c.dep = Some(DepConfig {
                        pdp: PDP.into(),
                        data: s.data_addr().expect("bound").to_string(),
                        device: s.device_addr().expect("bound").to_string(),
                        device_peer: device_peer.to_string(),
                        buffer: 64,
                        rerequest_ms: 1000,
                        verifier: spec.verifier.then(|| VERIFIER.to_string()),
                        fail_open: spec.fail_open,
                        bypass: spec.bypass.clone(),
                    })
                }
                _ => {}
            }
            configs.insert(id.to_string(), c);
        }

        let admin = Node::new(&configs[ADMIN])?;
        let mut services = BTreeMap::new();
        for id in &ids {
            let role = match *id {
                PASP => Role::Pasp,
                AASP => Role::Aasp,
                PDP | VERIFIER => Role::Pdp,
                _ => Role::Dep,
            };
            let s = sockets.remove(id).expect("bound");
            services.insert(id.to_string(), crate::start(role, configs[*id].clone(), s)?);
        }
        Ok(Topology { services, configs, admin })
    }

    pub fn service(&self, id: &str) -> &ServiceHandle {
        &self.services[id]
    }

    /// Device-side address of a DEP.
    pub fn device(&self, dep: &str) -> SocketAddr {
        self.services[dep].device.expect("dep")
    }

    /// Control address of the PASP, for policy clients.
    pub fn pasp(&self) -> SocketAddr {
        self.services[PASP].control
    }

    /// Health ping to every service.
    pub fn healthy(&self) -> BTreeMap<String, bool> {
        self.services.iter().map(|(id, s)| (id.clone(), ping(s.control, Duration::from_millis(500)))).collect()
    }

    /// Waits until every service answers pings and every PDP has its policy
    /// set.
    pub fn wait_ready(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            let pdps_synced = self
                .services
                .iter()
                .filter(|(id, _)| id.starts_with("pdp"))
                .all(|(_, s)| s.metrics().get("complete-exchanges") > 0);
            if pdps_synced && self.healthy().values().all(|h| *h) {
                return true;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        false
    }

    /// CRUD request as the administrator.
    pub fn crud(&self, op: CrudOp, id: &str, policy: Option<Policy>) -> Result<Message, NetError> {
        let msg = Message::PolicyCrudRequest { op, id: id.to_string(), policy };
        Ok(self.admin.request(PASP, self.pasp(), msg)?.message)
    }

    pub fn add_policy(&self, policy: Policy) -> Result<Message, NetError> {
        let id = policy.id.clone();
        self.crud(CrudOp::Create, &id, Some(policy))
    }

    /// Administrator configuration usable by an external policy client.
    pub fn admin_config(&self) -> &NodeConfig {
        &self.configs[ADMIN]
    }

    pub fn shutdown(self) -> BTreeMap<String, Metrics> {
        self.services.into_iter().map(|(id, s)| (id, s.shutdown())).collect()
    }
}
