//! Attribute administration and storage point.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};

use log::{info, warn};

use rtsabac_core::policy::{AttrType, AttrValue, AttributeBinding};
use rtsabac_core::wire::{Envelope, Message};
use rtsabac_core::Timestamp;

use crate::config::{ConfigError, NodeConfig};
use crate::node::{NetError, Node};
use crate::service::{serve, Metrics, ServiceHandle, SharedMetrics, Sockets};

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSpec {
    pub value_type: AttrType,
    pub time_variable: bool,
    pub freshness_ms: u64,
    pub value: Option<AttrValue>,
}

/// Attribute values with their validity rules.
#[derive(Debug, Clone, Default)]
pub struct AaspCore {
    pub attributes: BTreeMap<String, AttributeSpec>,
    values_file: Option<PathBuf>,
}

impl AaspCore {
    pub fn from_config(cfg: &NodeConfig) -> Result<AaspCore, ConfigError> {
        let catalog = cfg.catalog()?;
        let mut attributes = BTreeMap::new();
        for a in &cfg.attributes {
            let key = catalog.get(&a.key).expect("declared");
            let value = a.value.as_deref().and_then(|v| AttrValue::parse_typed(key.value_type, v));
            attributes.insert(
                a.key.clone(),
                AttributeSpec {
                    value_type: key.value_type,
                    time_variable: key.time_variable,
                    freshness_ms: a.freshness_ms,
                    value,
                },
            );
        }
        let values_file = cfg.aasp.as_ref().and_then(|a| a.values_file.clone());
        Ok(AaspCore { attributes, values_file })
    }

    pub fn set(&mut self, key: &str, value: AttrValue) {
        if let Some(a) = self.attributes.get_mut(key) {
            a.value = Some(value);
        }
    }

    /// Overrides from the values file, read fresh on every call.
    fn overrides(&self) -> BTreeMap<String, String> {
        let Some(path) = &self.values_file else { return BTreeMap::new() };
        match std::fs::read_to_string(path) {
            Ok(text) => parse_values(&text),
            Err(e) => {
                warn!("event=values-file-unreadable path={} detail=\"{e}\"", path.display());
                BTreeMap::new()
            }
        }
    }

    /// One binding per known key with a value; the rest are reported as
    /// unknown.
    pub fn resolve(&self, keys: &[String], now: Timestamp) -> (Vec<AttributeBinding>, Vec<String>) {
        let overrides = self.overrides();
        let mut bindings = Vec::new();
        let mut unknown = BTreeSet::new();
        for k in keys {
            let Some(spec) = self.attributes.get(k) else {
                unknown.insert(k.clone());
                continue;
            };
            let value = match overrides.get(k) {
                Some(text) => AttrValue::parse_typed(spec.value_type, text),
                None => spec.value.clone(),
            };
            let Some(value) = value else {
                unknown.insert(k.clone());
                continue;
            };
            let until = if spec.time_variable { now.plus(spec.freshness_ms) } else { Timestamp::INFINITE };
            bindings.push(AttributeBinding::new(k, value, now, until));
        }
        (bindings, unknown.into_iter().collect())
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().trim_matches('"').to_string()))
        .collect()
}

pub fn start(cfg: NodeConfig, sockets: Sockets) -> Result<ServiceHandle, NetError> {
    let core = AaspCore::from_config(&cfg)?;
    let node = Arc::new(Node::new(&cfg)?);
    let metrics: SharedMetrics = Arc::new(Mutex::new(Metrics::default()));
    let stop = Arc::new(AtomicBool::new(false));
    let mut handle = ServiceHandle::new(&cfg.id, sockets.control_addr(), metrics.clone(), stop.clone());
    info!("event=start service={} role=aasp control={} attributes={}", cfg.id, handle.control, core.attributes.len());
    let m = metrics.clone();
    let handler = Box::new(move |env: Envelope| match env.message {
        Message::AttributeRequest { keys } => {
            let (bindings, unknown) = core.resolve(&keys, Timestamp::now());
            m.lock().unwrap().add("unknown-keys", unknown.len() as u64);
            Some(Message::AttributeResolution { bindings, unknown })
        }
        other => {
            warn!("event=unexpected service=aasp type={}", other.message_type().name());
            None
        }
    });
    handle.push(serve(sockets.control, node, metrics, stop, handler));
    Ok(handle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{AaspConfig, AttributeConfig};

    fn cfg() -> NodeConfig {
        let mut c = NodeConfig::new("aasp");
        let attr = |key: &str, ty: &str, tv: bool, value: &str| AttributeConfig {
            key: key.into(),
            value_type: ty.into(),
            time_variable: tv,
            freshness_ms: 30_000,
            value: Some(value.into()),
        };
        c.attributes = vec![attr("mode", "str", true, "normal"), attr("bay", "int", false, "3")];
        c
    }

    #[test]
    fn validity_follows_time_variability() {
        let core = AaspCore::from_config(&cfg()).unwrap();
        let now = Timestamp(1_000_000);
        let (b, unknown) = core.resolve(&["mode".into(), "bay".into(), "nope".into()], now);
        assert_eq!(unknown, vec!["nope".to_string()]);
        assert_eq!(b[0], AttributeBinding::new("mode", AttrValue::Str("normal".into()), now, Timestamp(1_030_000)));
        assert_eq!(b[1], AttributeBinding::new("bay", AttrValue::Int(3), now, Timestamp::INFINITE));
    }

    #[test]
    fn values_file_is_reread() {
        let path = std::env::temp_dir().join(format!("aasp-values-{}.txt", std::process::id()));
        std::fs::write(&path, "mode = maintenance # flipped\n").unwrap();
        let mut c = cfg();
        c.aasp = Some(AaspConfig { values_file: Some(path.clone()) });
        let core = AaspCore::from_config(&c).unwrap();
        let (b, _) = core.resolve(&["mode".into()], Timestamp(0));
        assert_eq!(b[0].value, AttrValue::Str("maintenance".into()));
        std::fs::write(&path, "mode = normal\nbay = x\n").unwrap();
        let (b, unknown) = core.resolve(&["mode".into(), "bay".into()], Timestamp(0));
        assert_eq!(b[0].value, AttrValue::Str("normal".into()));
        assert_eq!(unknown, vec!["bay".to_string()]);
        std::fs::remove_file(&path).unwrap();
    }
}
