//! Policy decision point.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::{info, warn};

use rtsabac_core::decision::{
    default_decision, dynamic_authorization, AccessDecision, AttributeSource, EndpointRegistry, EngineConfig,
    SourceError,
};
use rtsabac_core::pattern::{match_nested, AccessRequestPattern, FlowPattern};
use rtsabac_core::policy::{AttributeBinding, Catalog, Policy};
use rtsabac_core::wire::{CrudOp, Envelope, Message, PolicyChange};
use rtsabac_core::Timestamp;

use crate::config::NodeConfig;
use crate::node::{NetError, Node};
use crate::service::{serve, Metrics, ServiceHandle, SharedMetrics, Sockets};

/// Policy replica, decision cache and derivation.
#[derive(Debug, Clone)]
pub struct PdpCore {
    pub policies: BTreeMap<String, Policy>,
    pub revision: u64,
    pub synced: bool,
    catalog: Catalog,
    registry: EndpointRegistry,
    engine: EngineConfig,
    cache: BTreeMap<String, AccessDecision>,
    pub cache_margin_ms: u64,
    pub metrics: Metrics,
}

impl PdpCore {
    pub fn new(catalog: Catalog, registry: EndpointRegistry, engine: EngineConfig) -> Self {
        PdpCore {
            policies: BTreeMap::new(),
            revision: 0,
            synced: false,
            catalog,
            registry,
            engine,
            cache: BTreeMap::new(),
            cache_margin_ms: 100,
            metrics: Metrics::default(),
        }
    }

    pub fn apply_complete(&mut self, policies: Vec<Policy>, revision: u64) {
        self.policies = policies.into_iter().map(|p| (p.id.clone(), p)).collect();
        self.cache.clear();
        self.revision = revision;
        self.synced = true;
    }

    /// Applies changes in order. Returns false when the revision does not
    /// follow the local one, in which case a complete exchange is due.
    pub fn apply_incremental(&mut self, changes: Vec<PolicyChange>, revision: u64) -> bool {
        for c in changes {
            let id = c.policy.id.clone();
            self.cache.remove(&id);
            match c.op {
                CrudOp::Create | CrudOp::Update => {
                    self.policies.insert(id, c.policy);
                }
                CrudOp::Delete => {
                    self.policies.remove(&id);
                }
                CrudOp::Read => {}
            }
        }
        let in_order = self.synced && revision == self.revision + 1;
        self.revision = revision;
        in_order
    }

    /// Policies whose flow matches `request` at some anchor point.
    pub fn applicable(&self, request: &AccessRequestPattern) -> Vec<Policy> {
        self.policies
            .values()
            .filter(|p| matches!(match_nested(&p.flow, request), Ok(Some(_))))
            .cloned()
            .collect()
    }

    /// Cached decisions still valid `cache_margin_ms` past `now`; the rest
    /// are derived together.
    fn decisions(&mut self, policies: &[Policy], source: &mut dyn AttributeSource, now: Timestamp) -> Vec<AccessDecision> {
        let usable = |d: &AccessDecision| d.is_valid_at(now) && d.is_valid_at(now.plus(self.cache_margin_ms));
        let stale: Vec<Policy> = policies
            .iter()
            .filter(|p| !self.cache.get(&p.id).is_some_and(usable))
            .cloned()
            .collect();
        if !stale.is_empty() {
            let fresh = dynamic_authorization(&stale, &self.catalog, source, &self.registry, &self.engine, now);
            self.metrics.add("derivations", fresh.len() as u64);
            for (p, d) in stale.iter().zip(fresh) {
                self.cache.insert(p.id.clone(), d);
            }
        }
        self.metrics.add("cache-hits", (policies.len() - stale.len()) as u64);
        policies.iter().map(|p| self.cache[&p.id].clone()).collect()
    }

    /// SessionInitialization payloads by DEP id, nexthop DEPs before the
    /// requester.
    pub fn handle_access_request(
        &mut self,
        requester: &str,
        request: &AccessRequestPattern,
        source: &mut dyn AttributeSource,
        now: Timestamp,
    ) -> Vec<(String, Vec<AccessDecision>)> {
        self.metrics.incr("access-requests");
        let policies = self.applicable(request);
        if policies.is_empty() {
            self.metrics.incr("default-decisions");
            return vec![(requester.to_string(), vec![default_decision(request, &self.engine, now)])];
        }
        let decisions = self.decisions(&policies, source, now);
        let hops: BTreeSet<String> = decisions.iter().flat_map(|d| d.nexthop.iter().cloned()).collect();
        let mut out: Vec<(String, Vec<AccessDecision>)> =
            hops.into_iter().filter(|h| h != requester).map(|h| (h, decisions.clone())).collect();
        out.push((requester.to_string(), decisions));
        out
    }

    /// Decisions for policies with exactly this flow, or a denying one.
    pub fn handle_verification(
        &mut self,
        flow: &FlowPattern,
        source: &mut dyn AttributeSource,
        now: Timestamp,
    ) -> Vec<AccessDecision> {
        self.metrics.incr("verifications");
        let canonical = flow.canonicalized();
        let policies: Vec<Policy> =
            self.policies.values().filter(|p| p.flow.canonicalized() == canonical).cloned().collect();
        if policies.is_empty() {
            let until = now.plus(self.engine.default_deny_ttl_ms);
            return vec![AccessDecision::deny(canonical, now, until, None)];
        }
        self.decisions(&policies, source, now)
    }
}

/// Attribute source backed by an AASP over the control plane.
pub struct RemoteAasp<'a> {
    pub node: &'a Node,
    pub peer: &'a str,
    pub addr: SocketAddr,
    pub calls: u64,
}

impl AttributeSource for RemoteAasp<'_> {
    fn resolve(&mut self, keys: &BTreeSet<String>, now: Timestamp) -> Result<Vec<AttributeBinding>, SourceError> {
        self.calls += 1;
        let msg = Message::AttributeRequest { keys: keys.iter().cloned().collect() };
        match self.node.request(self.peer, self.addr, msg) {
            Ok(Envelope { message: Message::AttributeResolution { bindings, unknown }, .. }) => {
                if !unknown.is_empty() {
                    warn!("event=unknown-attributes keys={}", unknown.join(","));
                }
                // The AASP stamps bindings with its own clock, which can be a
                // tick ahead of the request time.
                Ok(bindings.into_iter().map(|b| AttributeBinding { valid_from: b.valid_from.min(now), ..b }).collect())
            }
            Ok(_) => Err(SourceError::Rejected("unexpected reply".into())),
            Err(e) => Err(SourceError::Unreachable(e.to_string())),
        }
    }
}

struct Pdp {
    node: Arc<Node>,
    cfg: NodeConfig,
    core: Mutex<PdpCore>,
    metrics: SharedMetrics,
}

impl Pdp {
    fn source(&self) -> Result<(String, SocketAddr), NetError> {
        let aasp = self.cfg.pdp.as_ref().map(|p| p.aasp.clone()).unwrap_or_default();
        let addr = self.cfg.peer_control(&aasp)?;
        Ok((aasp, addr))
    }

    fn with_source<T>(&self, f: impl FnOnce(&mut PdpCore, &mut dyn AttributeSource) -> T) -> T {
        let mut core = self.core.lock().unwrap();
        let r = match self.source() {
            Ok((peer, addr)) => {
                let mut src = RemoteAasp { node: &self.node, peer: &peer, addr, calls: 0 };
                let r = f(&mut core, &mut src);
                self.metrics.lock().unwrap().add("attribute-requests", src.calls);
                r
            }
            Err(_) => f(&mut core, &mut Unreachable),
        };
        let m = std::mem::take(&mut core.metrics);
        let mut shared = self.metrics.lock().unwrap();
        for (k, v) in m.iter() {
            shared.add(k, v);
        }
        r
    }

    /// Complete policy exchange with the PASP.
    fn sync(&self) -> Result<(), NetError> {
        let pasp = self.cfg.pdp.as_ref().map(|p| p.pasp.clone()).unwrap_or_default();
        let addr = self.cfg.peer_control(&pasp)?;
        match self.node.request(&pasp, addr, Message::PolicyExchangeRequest)?.message {
            Message::PolicyExchangeComplete { policies, revision } => {
                info!("event=complete-exchange service={} policies={} revision={revision}", self.node.id, policies.len());
                self.core.lock().unwrap().apply_complete(policies, revision);
                self.metrics.lock().unwrap().incr("complete-exchanges");
                Ok(())
            }
            _ => Err(NetError::Unexpected("to policy exchange request")),
        }
    }

    fn session_init(&self, targets: Vec<(String, Vec<AccessDecision>)>) {
        for (dep, decisions) in targets {
            let r = self
                .cfg
                .peer_control(&dep)
                .map_err(NetError::from)
                .and_then(|addr| self.node.send(&dep, addr, Message::SessionInitialization { decisions }));
            let mut m = self.metrics.lock().unwrap();
            match r {
                Ok(()) => m.incr("session-initializations"),
                Err(e) => {
                    m.incr("session-initialization-failures");
                    warn!("event=session-init-failed service={} dep={dep} detail=\"{e}\"", self.node.id);
                }
            }
        }
    }
}

struct Unreachable;

impl AttributeSource for Unreachable {
    fn resolve(&mut self, _: &BTreeSet<String>, _: Timestamp) -> Result<Vec<AttributeBinding>, SourceError> {
        Err(SourceError::Unreachable("no attribute source configured".into()))
    }
}

pub fn start(cfg: NodeConfig, sockets: Sockets) -> Result<ServiceHandle, NetError> {
    let pc = cfg.pdp.clone().ok_or_else(|| crate::config::ConfigError::Invalid("missing [pdp] section".into()))?;
    let engine = EngineConfig { error_retry_ms: pc.error_retry_ms, default_deny_ttl_ms: pc.default_deny_ttl_ms };
    let mut core = PdpCore::new(cfg.catalog()?, cfg.registry()?, engine);
    core.cache_margin_ms = pc.cache_margin_ms;
    let node = Arc::new(Node::new(&cfg)?);
    let metrics: SharedMetrics = Arc::new(Mutex::new(Metrics::default()));
    let stop = Arc::new(AtomicBool::new(false));
    let mut handle = ServiceHandle::new(&cfg.id, sockets.control_addr(), metrics.clone(), stop.clone());
    info!("event=start service={} role=pdp control={}", cfg.id, handle.control);
    let pdp = Arc::new(Pdp { node: node.clone(), cfg, core: Mutex::new(core), metrics: metrics.clone() });

    let syncer = pdp.clone();
    let stop_sync = stop.clone();
    handle.push(std::thread::spawn(move || {
        while !stop_sync.load(Ordering::SeqCst) && !syncer.core.lock().unwrap().synced {
            if let Err(e) = syncer.sync() {
                warn!("event=complete-exchange-failed service={} detail=\"{e}\"", syncer.node.id);
                std::thread::sleep(Duration::from_millis(100));
            }
        }
    }));

    let p = pdp.clone();
    let handler = Box::new(move |env: Envelope| {
        let now = Timestamp::now();
        match env.message {
            Message::PolicyExchangeIncremental { changes, revision } => {
                let n = changes.len();
                let in_order = p.core.lock().unwrap().apply_incremental(changes, revision);
                info!("event=incremental-exchange service={} changes={n} revision={revision}", p.node.id);
                if !in_order {
                    if let Err(e) = p.sync() {
                        warn!("event=complete-exchange-failed service={} detail=\"{e}\"", p.node.id);
                    }
                }
                None
            }
            Message::AccessRequest { request } => {
                let targets = p.with_source(|core, src| core.handle_access_request(&env.sender, &request, src, now));
                p.session_init(targets);
                None
            }
            Message::AccessVerificationRequest { flow } => {
                let decisions = p.with_source(|core, src| core.handle_verification(&flow, src, now));
                Some(Message::AccessVerificationResponse { decisions })
            }
            other => {
                warn!("event=unexpected service=pdp type={}", other.message_type().name());
                None
            }
        }
    });
    handle.push(serve(sockets.control, node, metrics, stop, handler));
    Ok(handle)
}
