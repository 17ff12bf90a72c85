//! Policy administration and storage point.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::{info, warn};

use rtsabac_core::policy::text::parse_policies;
use rtsabac_core::policy::{validate_policy, Catalog, Policy};
use rtsabac_core::wire::codec::{decode_list, encode_list, Reader, Writer};
use rtsabac_core::wire::{CrudOp, CrudStatus, DecodeError, Message, PolicyChange};

use crate::config::{ConfigError, NodeConfig, PaspConfig};
use crate::node::{NetError, Node};
use crate::service::{serve, Metrics, ServiceHandle, SharedMetrics, Sockets};

/// Read id that lists every policy id in the reply details.
pub const LIST_ALL: &str = "*";

/// Persistent policy set with a revision counter.
#[derive(Debug, Clone)]
pub struct PaspCore {
    pub policies: BTreeMap<String, Policy>,
    pub revision: u64,
    catalog: Catalog,
    admins: BTreeSet<String>,
    store: Option<PathBuf>,
}

impl PaspCore {
    pub fn new(catalog: Catalog, admins: impl IntoIterator<Item = String>) -> Self {
        PaspCore { policies: BTreeMap::new(), revision: 0, catalog, admins: admins.into_iter().collect(), store: None }
    }

    /// Loads `store` if it exists and persists there after every change.
    pub fn with_store(mut self, store: PathBuf) -> Result<Self, ConfigError> {
        if store.exists() {
            let bytes = std::fs::read(&store).map_err(|source| ConfigError::Io { path: store.clone(), source })?;
            let (revision, policies) =
                decode_store(&bytes).map_err(|e| ConfigError::Invalid(format!("{}: {e}", store.display())))?;
            self.revision = revision;
            self.policies = policies.into_iter().map(|p| (p.id.clone(), p)).collect();
        }
        self.store = Some(store);
        Ok(self)
    }

    fn persist(&self) {
        let Some(path) = &self.store else { return };
        let policies: Vec<Policy> = self.policies.values().cloned().collect();
        let mut w = Writer::new();
        w.u64(self.revision);
        encode_list(&policies, &mut w);
        match w.finish() {
            Ok(bytes) => {
                let tmp = path.with_extension("tmp");
                if let Err(e) = std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, path)) {
                    warn!("event=persist-failed path={} detail=\"{e}\"", path.display());
                }
            }
            Err(e) => warn!("event=persist-failed detail=\"{e}\""),
        }
    }

    fn check(&self, p: &Policy) -> Result<(), Vec<String>> {
        validate_policy(p, &self.catalog).map_err(|v| v.iter().map(|x| x.to_string()).collect())
    }

    /// Applies one CRUD request. Successful mutations return the change to
    /// push to PDPs.
    pub fn handle_crud(
        &mut self,
        sender: &str,
        op: CrudOp,
        id: &str,
        policy: Option<Policy>,
    ) -> (Message, Option<PolicyChange>) {
        let reply = |s: &Self, status, policy, details| {
            Message::PolicyCrudResponse { status, revision: s.revision, policy, details }
        };
        if op != CrudOp::Read && !self.admins.contains(sender) {
            return (reply(self, CrudStatus::Unauthorized, None, vec![format!("'{sender}' is not an administrator")]), None);
        }
        let change = match op {
            CrudOp::Read if id == LIST_ALL => {
                return (reply(self, CrudStatus::Ok, None, self.policies.keys().cloned().collect()), None);
            }
            CrudOp::Read => {
                return match self.policies.get(id) {
                    Some(p) => (reply(self, CrudStatus::Ok, Some(p.clone()), vec![]), None),
                    None => (reply(self, CrudStatus::NotFound, None, vec![]), None),
                };
            }
            CrudOp::Create | CrudOp::Update => {
                let Some(p) = policy else {
                    return (reply(self, CrudStatus::ValidationFailed, None, vec!["missing policy".into()]), None);
                };
                if p.id != id {
                    let d = vec![format!("policy id '{}' does not match request id '{id}'", p.id)];
                    return (reply(self, CrudStatus::ValidationFailed, None, d), None);
                }
                let exists = self.policies.contains_key(id);
                if op == CrudOp::Create && exists {
                    return (reply(self, CrudStatus::Duplicate, None, vec![]), None);
                }
                if op == CrudOp::Update && !exists {
                    return (reply(self, CrudStatus::NotFound, None, vec![]), None);
                }
                if let Err(d) = self.check(&p) {
                    return (reply(self, CrudStatus::ValidationFailed, None, d), None);
                }
                self.policies.insert(id.to_string(), p.clone());
                PolicyChange { op, policy: p }
            }
            CrudOp::Delete => match self.policies.remove(id) {
                Some(p) => PolicyChange { op, policy: p },
                None => return (reply(self, CrudStatus::NotFound, None, vec![]), None),
            },
        };
        self.revision += 1;
        self.persist();
        info!("event=policy-{} id={id} revision={}", op.name(), self.revision);
        (reply(self, CrudStatus::Ok, Some(change.policy.clone()), vec![]), Some(change))
    }

    pub fn complete(&self) -> Message {
        Message::PolicyExchangeComplete { policies: self.policies.values().cloned().collect(), revision: self.revision }
    }

    /// Loads a policy text file, replacing nothing that already exists.
    pub fn seed(&mut self, text: &str) -> Result<usize, ConfigError> {
        let policies = parse_policies(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut n = 0;
        for p in policies {
            self.check(&p).map_err(|d| ConfigError::Invalid(format!("policy {}: {}", p.id, d.join("; "))))?;
            if !self.policies.contains_key(&p.id) {
                self.policies.insert(p.id.clone(), p);
                n += 1;
            }
        }
        if n > 0 {
            self.revision += 1;
            self.persist();
        }
        Ok(n)
    }
}

fn decode_store(bytes: &[u8]) -> Result<(u64, Vec<Policy>), DecodeError> {
    let mut r = Reader::new(bytes);
    let revision = r.u64()?;
    let policies = decode_list(&mut r)?;
    r.finish()?;
    Ok((revision, policies))
}

fn push(node: &Node, cfg: &NodeConfig, pasp: &PaspConfig, metrics: &SharedMetrics, change: PolicyChange, revision: u64) {
    for pdp in &pasp.pdps {
        let addr = match cfg.peer_control(pdp) {
            Ok(a) => a,
            Err(e) => {
                warn!("event=push-failed pdp={pdp} detail=\"{e}\"");
                continue;
            }
        };
        let msg = Message::PolicyExchangeIncremental { changes: vec![change.clone()], revision };
        let mut delay = pasp.push_backoff_ms;
        for attempt in 0..=pasp.push_retries {
            match node.send(pdp, addr, msg.clone()) {
                Ok(()) => {
                    metrics.lock().unwrap().incr("pushes");
                    break;
                }
                Err(e) if attempt == pasp.push_retries => {
                    metrics.lock().unwrap().incr("push-failures");
                    warn!("event=push-failed pdp={pdp} detail=\"{e}\"");
                }
                Err(_) => {
                    std::thread::sleep(Duration::from_millis(delay));
                    delay *= 2;
                }
            }
        }
    }
}

pub fn start(cfg: NodeConfig, sockets: Sockets) -> Result<ServiceHandle, NetError> {
    let pasp_cfg = cfg.pasp.clone().unwrap_or_default();
    let node = Arc::new(Node::new(&cfg)?);
    let mut core = PaspCore::new(cfg.catalog()?, pasp_cfg.admins.clone());
    if let Some(store) = &pasp_cfg.store {
        core = core.with_store(store.clone())?;
    }
    if let Some(path) = &pasp_cfg.policies {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
        core.seed(&text)?;
    }
    let metrics: SharedMetrics = Arc::new(Mutex::new(Metrics::default()));
    let stop = Arc::new(AtomicBool::new(false));
    let mut handle = ServiceHandle::new(&cfg.id, sockets.control_addr(), metrics.clone(), stop.clone());
    info!("event=start service={} role=pasp control={} policies={}", cfg.id, handle.control, core.policies.len());
    let (n, m) = (node.clone(), metrics.clone());
    let handler = Box::new(move |env: rtsabac_core::wire::Envelope| match env.message {
        Message::PolicyCrudRequest { op, id, policy } => {
            let (reply, change) = core.handle_crud(&env.sender, op, &id, policy);
            if let Some(c) = change {
                m.lock().unwrap().incr("mutations");
                push(&n, &cfg, &pasp_cfg, &m, c, core.revision);
            }
            Some(reply)
        }
        Message::PolicyExchangeRequest => Some(core.complete()),
        other => {
            warn!("event=unexpected service=pasp type={}", other.message_type().name());
            None
        }
    });
    handle.push(serve(sockets.control, node, metrics, stop, handler));
    Ok(handle)
}
