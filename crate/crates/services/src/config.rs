//! Service configuration files.
//!
//! One TOML file per service. Common keys:
//!
//! ```toml
//! id = "dep-a"
//! scheme = "hmac-sha512"        # noop | hmac-sha512 | ed25519
//! key = "hex:00112233"          # default HMAC key for peers without one
//! secret = "hex:9d61..."        # own Ed25519 seed (32 bytes)
//! control = "127.0.0.1:7100"    # TCP listen address
//! freshness-ms = 2000
//!
//! [[attribute]]
//! key = "mode"
//! type = "str"
//! time-variable = true
//! freshness-ms = 2000
//! value = "normal"              # AASP only
//!
//! [peers.pdp]
//! control = "127.0.0.1:7003"
//! key = "text:per-peer-secret"  # HMAC key shared with this peer
//! public = "hex:d75a..."        # Ed25519 public key of this peer
//!
//! [peers.dep-b]
//! control = "127.0.0.1:7201"
//! data = "127.0.0.1:7202"
//! protects = [{ mac = "00:11:22:33:44:66", ip = "10.0.0.2" }]
//! ```
//!
//! Role sections `[pasp]`, `[aasp]`, `[pdp]` and `[dep]` hold the role
//! specific keys, see the corresponding structs. Key material is written
//! as `hex:<digits>`, `file:<path>` (raw bytes) or `text:<utf8>`.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rtsabac_core::decision::{EndpointRegistry, ProtectedEndpoint};
use rtsabac_core::pattern::FlowPattern;
use rtsabac_core::policy::{AttrType, AttrValue, AttributeKey, Catalog};
use rtsabac_core::wire::Scheme;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Syntax(String),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct NodeConfig {
    pub id: String,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default)]
    pub key: Option<String>,
    #[serde(default)]
    pub secret: Option<String>,
    #[serde(default = "any_local")]
    pub control: String,
    #[serde(default = "default_freshness")]
    pub freshness_ms: u64,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default, rename = "attribute")]
    pub attributes: Vec<AttributeConfig>,
    #[serde(default)]
    pub peers: BTreeMap<String, PeerConfig>,
    #[serde(default)]
    pub pasp: Option<PaspConfig>,
    #[serde(default)]
    pub aasp: Option<AaspConfig>,
    #[serde(default)]
    pub pdp: Option<PdpConfig>,
    #[serde(default)]
    pub dep: Option<DepConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct PeerConfig {
    #[serde(default)]
    pub control: Option<String>,
    #[serde(default)]
    pub data: Option<String>,
    #[serde(default)]
    pub key: Option<String>,
    #[serde(default)]
    pub public: Option<String>,
    #[serde(default)]
    pub protects: Vec<EndpointConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    #[serde(default)]
    pub mac: Option<String>,
    #[serde(default)]
    pub ip: Option<String>,
    #[serde(default)]
    pub port: Option<u16>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AttributeConfig {
    pub key: String,
    #[serde(rename = "type")]
    pub value_type: String,
    #[serde(default)]
    pub time_variable: bool,
    #[serde(default = "default_attr_freshness")]
    pub freshness_ms: u64,
    #[serde(default)]
    pub value: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct PaspConfig {
    /// Peer ids allowed to create, update and delete policies.
    #[serde(default = "default_admins")]
    pub admins: Vec<String>,
    /// Peer ids receiving incremental exchanges.
    #[serde(default)]
    pub pdps: Vec<String>,
    /// Binary policy store, rewritten after each change.
    #[serde(default)]
    pub store: Option<PathBuf>,
    /// Policy text file loaded at startup when the store is empty.
    #[serde(default)]
    pub policies: Option<PathBuf>,
    #[serde(default = "default_push_retries")]
    pub push_retries: u32,
    #[serde(default = "default_push_backoff")]
    pub push_backoff_ms: u64,
}

impl Default for PaspConfig {
    fn default() -> Self {
        PaspConfig {
            admins: default_admins(),
            pdps: Vec::new(),
            store: None,
            policies: None,
            push_retries: default_push_retries(),
            push_backoff_ms: default_push_backoff(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AaspConfig {
    /// `key = value` lines overriding configured values, re-read on every
    /// request.
    #[serde(default)]
    pub values_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct PdpConfig {
    pub pasp: String,
    pub aasp: String,
    #[serde(default = "default_error_retry")]
    pub error_retry_ms: u64,
    #[serde(default = "default_deny_ttl")]
    pub default_deny_ttl_ms: u64,
    /// Cached decisions are reused only while valid this much longer.
    #[serde(default = "default_cache_margin")]
    pub cache_margin_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Ingress,
    Egress,
    Both,
}

impl Direction {
    pub fn covers(self, other: Direction) -> bool {
        self == Direction::Both || self == other
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BypassConfig {
    pub flow: String,
    #[serde(default = "both")]
    pub direction: Direction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DepConfig {
    pub pdp: String,
    /// UDP socket facing peer DEPs.
    #[serde(default = "any_local")]
    pub data: String,
    /// UDP socket standing in for the protected device's link.
    #[serde(default = "any_local")]
    pub device: String,
    /// Where delivered frames are written.
    pub device_peer: String,
    #[serde(default = "default_buffer")]
    pub buffer: usize,
    #[serde(default = "default_rerequest")]
    pub rerequest_ms: u64,
    /// Second PDP checking every session initialization.
    #[serde(default)]
    pub verifier: Option<String>,
    #[serde(default)]
    pub fail_open: bool,
    #[serde(default)]
    pub bypass: Vec<BypassConfig>,
}

fn default_scheme() -> String {
    "noop".into()
}
fn any_local() -> String {
    "127.0.0.1:0".into()
}
fn default_freshness() -> u64 {
    rtsabac_core::wire::envelope::DEFAULT_FRESHNESS_MS
}
fn default_timeout() -> u64 {
    1000
}
fn default_attr_freshness() -> u64 {
    30_000
}
fn default_admins() -> Vec<String> {
    vec!["admin".into()]
}
fn default_push_retries() -> u32 {
    5
}
fn default_push_backoff() -> u64 {
    100
}
fn default_error_retry() -> u64 {
    1000
}
fn default_cache_margin() -> u64 {
    100
}

fn default_deny_ttl() -> u64 {
    5000
}
fn both() -> Direction {
    Direction::Both
}
fn default_buffer() -> usize {
    64
}
fn default_rerequest() -> u64 {
    1000
}

impl NodeConfig {
    pub fn new(id: &str) -> Self {
        NodeConfig {
            id: id.to_string(),
            scheme: default_scheme(),
            key: None,
            secret: None,
            control: any_local(),
            freshness_ms: default_freshness(),
            timeout_ms: default_timeout(),
            attributes: Vec::new(),
            peers: BTreeMap::new(),
            pasp: None,
            aasp: None,
            pdp: None,
            dep: None,
        }
    }

    pub fn parse(text: &str) -> Result<NodeConfig, ConfigError> {
        let cfg: NodeConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.scheme()?;
        cfg.catalog()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<NodeConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn scheme(&self) -> Result<Scheme, ConfigError> {
        self.scheme.parse().map_err(invalid)
    }

    pub fn catalog(&self) -> Result<Catalog, ConfigError> {
        let mut c = Catalog::new();
        for a in &self.attributes {
            let value_type = AttrType::parse(&a.value_type)
                .ok_or_else(|| invalid(format!("attribute {}: unknown type '{}'", a.key, a.value_type)))?;
            c.declare(AttributeKey { name: a.key.clone(), value_type, time_variable: a.time_variable })
                .map_err(|e| invalid(e.to_string()))?;
            if let Some(v) = &a.value {
                AttrValue::parse_typed(value_type, v)
                    .ok_or_else(|| invalid(format!("attribute {}: bad value '{v}'", a.key)))?;
            }
        }
        Ok(c)
    }

    pub fn peer(&self, id: &str) -> Result<&PeerConfig, ConfigError> {
        self.peers.get(id).ok_or_else(|| invalid(format!("unknown peer '{id}'")))
    }

    pub fn peer_control(&self, id: &str) -> Result<SocketAddr, ConfigError> {
        let p = self.peer(id)?;
        resolve(p.control.as_deref().ok_or_else(|| invalid(format!("peer '{id}' has no control address")))?)
    }

    pub fn peer_data(&self, id: &str) -> Result<SocketAddr, ConfigError> {
        let p = self.peer(id)?;
        resolve(p.data.as_deref().ok_or_else(|| invalid(format!("peer '{id}' has no data address")))?)
    }

    /// Protected endpoints declared on peers.
    pub fn registry(&self) -> Result<EndpointRegistry, ConfigError> {
        let mut r = EndpointRegistry::new();
        for (id, p) in &self.peers {
            for e in &p.protects {
                r.protect(id, e.parse().map_err(|m| invalid(format!("peer {id}: {m}")))?);
            }
        }
        Ok(r)
    }

    pub fn bypass_rules(&self) -> Result<Vec<(FlowPattern, Direction)>, ConfigError> {
        let Some(dep) = &self.dep else { return Ok(Vec::new()) };
        dep.bypass
            .iter()
            .map(|b| {
                let flow: FlowPattern =
                    b.flow.parse().map_err(|e| invalid(format!("bypass rule '{}': {e}", b.flow)))?;
                Ok((flow, b.direction))
            })
            .collect()
    }
}

impl EndpointConfig {
    pub fn parse(&self) -> Result<ProtectedEndpoint, String> {
        let mac = match &self.mac {
            Some(m) => Some(parse_mac(m).ok_or_else(|| format!("bad mac '{m}'"))?),
            None => None,
        };
        let ip = match &self.ip {
            Some(a) => Some(a.parse::<Ipv4Addr>().map_err(|_| format!("bad ip '{a}'"))?),
            None => None,
        };
        Ok(ProtectedEndpoint { mac, ip, port: self.port })
    }
}

pub fn parse_mac(s: &str) -> Option<[u8; 6]> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 6 {
        return None;
    }
    let mut out = [0u8; 6];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = u8::from_str_radix(p, 16).ok()?;
    }
    Some(out)
}

pub fn resolve(addr: &str) -> Result<SocketAddr, ConfigError> {
    addr.to_socket_addrs()
        .map_err(|e| invalid(format!("address '{addr}': {e}")))?
        .next()
        .ok_or_else(|| invalid(format!("address '{addr}' resolves to nothing")))
}

/// Decodes `hex:`, `file:` or `text:` key material.
pub fn key_material(spec: &str) -> Result<Vec<u8>, ConfigError> {
    if let Some(h) = spec.strip_prefix("hex:") {
        hex::decode(h.trim()).map_err(|e| invalid(format!("hex key: {e}")))
    } else if let Some(p) = spec.strip_prefix("file:") {
        std::fs::read(p).map_err(|source| ConfigError::Io { path: p.into(), source })
    } else if let Some(t) = spec.strip_prefix("text:") {
        Ok(t.as_bytes().to_vec())
    } else {
        Err(invalid(format!("key material must start with hex:, file: or text: (got '{spec}')")))
    }
}
