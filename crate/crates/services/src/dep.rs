//! Decision enforcement point in harness mode: the protected device talks to
//! a local datagram socket, peer DEPs to the data socket.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::{debug, info, warn};

use rtsabac_core::decision::{enforce, AccessDecision, DecisionStore};
use rtsabac_core::dissect::Dissector;
use rtsabac_core::pattern::{match_nested, AccessRequestPattern, FlowPattern};
use rtsabac_core::policy::Action;
use rtsabac_core::wire::{Envelope, Message, Wire};
use rtsabac_core::Timestamp;

use crate::config::{ConfigError, Direction, NodeConfig};
use crate::node::{NetError, Node, DATA_RAW, DATA_SEALED};
use crate::service::{datagrams, serve, Metrics, ServiceHandle, SharedMetrics, Sockets};

/// Side effects requested by [`DepCore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DepAction {
    /// Seal the frame in a PayloadExchangeRequest for this DEP.
    Forward { dep: String, frame: Vec<u8> },
    /// Send the frame unauthenticated to every peer DEP.
    Bypass { frame: Vec<u8> },
    /// Ask the PDP for decisions.
    Request { request: AccessRequestPattern },
    /// Hand the frame to the protected device.
    Deliver { frame: Vec<u8> },
}

#[derive(Debug, Clone)]
struct Pending {
    request: AccessRequestPattern,
    frames: VecDeque<Vec<u8>>,
    requested_at: Timestamp,
}

/// Session state of one DEP.
#[derive(Debug)]
pub struct DepCore {
    pub id: String,
    dissector: Dissector,
    bypass: Vec<(FlowPattern, Direction)>,
    pub ingress: DecisionStore,
    pub egress: DecisionStore,
    pending: BTreeMap<Vec<u8>, Pending>,
    buffer: usize,
    rerequest_ms: u64,
    default_deny_ttl_ms: u64,
    pub metrics: Metrics,
}

impl DepCore {
    pub fn new(id: &str, bypass: Vec<(FlowPattern, Direction)>, buffer: usize, rerequest_ms: u64) -> Self {
        DepCore {
            id: id.to_string(),
            dissector: Dissector::default(),
            bypass,
            ingress: DecisionStore::new(),
            egress: DecisionStore::new(),
            pending: BTreeMap::new(),
            buffer: buffer.max(1),
            rerequest_ms,
            default_deny_ttl_ms: 5000,
            metrics: Metrics::default(),
        }
    }

    fn drop(&mut self, reason: &str) {
        self.metrics.incr(&format!("dropped-{reason}"));
    }

    fn bypassed(&self, request: &AccessRequestPattern, dir: Direction) -> bool {
        self.bypass.iter().any(|(f, d)| d.covers(dir) && matches!(match_nested(f, request), Ok(Some(_))))
    }

    pub fn pending_frames(&self) -> usize {
        self.pending.values().map(|p| p.frames.len()).sum()
    }

    fn forward(&mut self, decision: &AccessDecision, request: &AccessRequestPattern, frame: Vec<u8>, now: Timestamp, out: &mut Vec<DepAction>) {
        match enforce(decision, request, now) {
            (Action::Grant, hops) => {
                for dep in hops {
                    self.metrics.incr("forwarded");
                    out.push(DepAction::Forward { dep, frame: frame.clone() });
                }
            }
            (Action::Deny, _) => self.drop("denied"),
        }
    }

    /// Frame from the protected device.
    pub fn egress(&mut self, frame: Vec<u8>, now: Timestamp) -> Vec<DepAction> {
        let Ok(request) = self.dissector.dissect(&frame) else {
            self.drop("dissect");
            return vec![];
        };
        if self.bypassed(&request, Direction::Egress) {
            self.metrics.incr("bypassed");
            return vec![DepAction::Bypass { frame }];
        }
        let mut out = Vec::new();
        let key = request.to_bytes().unwrap_or_default();
        if !self.pending.contains_key(&key) {
            self.egress.purge(now);
            if let Some(d) = self.egress.lookup(&request, now) {
                self.forward(&d, &request, frame, now, &mut out);
                return out;
            }
        }
        let limit = self.buffer;
        let fresh = !self.pending.contains_key(&key);
        let entry = self.pending.entry(key).or_insert_with(|| Pending {
            request: request.clone(),
            frames: VecDeque::new(),
            requested_at: now,
        });
        if entry.frames.len() >= limit {
            entry.frames.pop_front();
            self.metrics.incr("dropped-overflow");
        }
        entry.frames.push_back(frame);
        self.metrics.incr("buffered");
        let due = fresh || now.0.saturating_sub(entry.requested_at.0) >= self.rerequest_ms;
        if due {
            entry.requested_at = now;
            self.metrics.incr("access-requests");
            out.push(DepAction::Request { request });
        }
        out
    }

    /// Re-requests for pending flows whose request is overdue.
    pub fn tick(&mut self, now: Timestamp) -> Vec<DepAction> {
        let mut out = Vec::new();
        for p in self.pending.values_mut() {
            if now.0.saturating_sub(p.requested_at.0) >= self.rerequest_ms {
                p.requested_at = now;
                out.push(DepAction::Request { request: p.request.clone() });
            }
        }
        self.metrics.add("access-requests", out.len() as u64);
        out
    }

    /// Installs decisions of a SessionInitialization and releases buffered
    /// frames that now have a decision, in arrival order.
    pub fn install(&mut self, decisions: Vec<AccessDecision>, now: Timestamp) -> Vec<DepAction> {
        for d in decisions {
            if d.nexthop.contains(&self.id) {
                self.ingress.insert(d);
            } else {
                self.egress.insert(d);
            }
        }
        self.egress.purge(now);
        self.ingress.purge(now);
        self.drain(now)
    }

    /// Denying decisions for `flows`, used when verification fails.
    pub fn install_default_deny(&mut self, flows: &[FlowPattern], now: Timestamp) -> Vec<DepAction> {
        let until = now.plus(self.default_deny_ttl_ms);
        for f in flows {
            self.egress.insert(AccessDecision::deny(f.clone(), now, until, None));
        }
        self.metrics.add("conflicts", flows.len() as u64);
        self.drain(now)
    }

    fn drain(&mut self, now: Timestamp) -> Vec<DepAction> {
        let mut out = Vec::new();
        let keys: Vec<Vec<u8>> = self.pending.keys().cloned().collect();
        for k in keys {
            let request = self.pending[&k].request.clone();
            let Some(d) = self.egress.lookup(&request, now) else { continue };
            let p = self.pending.remove(&k).expect("present");
            for frame in p.frames {
                self.forward(&d, &request, frame, now, &mut out);
            }
        }
        out
    }

    /// Frame carried by an authenticated PayloadExchangeRequest.
    pub fn ingress(&mut self, frame: Vec<u8>, now: Timestamp) -> Vec<DepAction> {
        let Ok(request) = self.dissector.dissect(&frame) else {
            self.drop("dissect");
            return vec![];
        };
        self.ingress.purge(now);
        let Some(d) = self.ingress.lookup(&request, now) else {
            self.drop("no-decision");
            return vec![];
        };
        match enforce(&d, &request, now) {
            (Action::Grant, hops) if hops.contains(&self.id) => {
                self.metrics.incr("delivered");
                vec![DepAction::Deliver { frame }]
            }
            (Action::Grant, _) => {
                self.drop("not-nexthop");
                vec![]
            }
            (Action::Deny, _) => {
                self.drop("denied");
                vec![]
            }
        }
    }

    /// Unauthenticated frame from a peer DEP; delivered only if a bypass
    /// rule covers it.
    pub fn ingress_raw(&mut self, frame: Vec<u8>) -> Vec<DepAction> {
        match self.dissector.dissect(&frame) {
            Ok(r) if self.bypassed(&r, Direction::Ingress) => {
                self.metrics.incr("bypassed");
                vec![DepAction::Deliver { frame }]
            }
            Ok(_) => {
                self.drop("unauthenticated");
                vec![]
            }
            Err(_) => {
                self.drop("dissect");
                vec![]
            }
        }
    }
}

/// Whether two decision sets disagree on action or nexthop for a shared
/// flow.
pub fn conflicts(issued: &[AccessDecision], verified: &[AccessDecision]) -> bool {
    issued.iter().any(|a| {
        verified.iter().any(|b| {
            a.flows.iter().any(|f| b.flows.contains(f)) && (a.action != b.action || a.nexthop != b.nexthop)
        })
    })
}

struct Dep {
    node: Arc<Node>,
    cfg: NodeConfig,
    core: Mutex<DepCore>,
    data: UdpSocket,
    device: UdpSocket,
    device_peer: SocketAddr,
    pdp: (String, SocketAddr),
    metrics: SharedMetrics,
}

impl Dep {
    /// Runs `f` on the core and performs its actions. Data-plane sends
    /// happen under the core lock so that per-flow order is kept; access
    /// requests go out after it is released.
    fn step(&self, f: impl FnOnce(&mut DepCore) -> Vec<DepAction>) {
        let mut requests = Vec::new();
        {
            let mut core = self.core.lock().unwrap();
            for a in f(&mut core) {
                match a {
                    DepAction::Forward { dep, frame } => self.forward(&dep, frame),
                    DepAction::Bypass { frame } => self.bypass(&frame),
                    DepAction::Deliver { frame } => {
                        if let Err(e) = self.device.send_to(&frame, self.device_peer) {
                            warn!("event=deliver-failed service={} detail=\"{e}\"", self.node.id);
                        }
                    }
                    DepAction::Request { request } => requests.push(request),
                }
            }
            let m = std::mem::take(&mut core.metrics);
            let mut shared = self.metrics.lock().unwrap();
            for (k, v) in m.iter() {
                shared.add(k, v);
            }
        }
        for request in requests {
            let (pdp, addr) = &self.pdp;
            if let Err(e) = self.node.send(pdp, *addr, Message::AccessRequest { request }) {
                self.metrics.lock().unwrap().incr("access-request-failures");
                warn!("event=access-request-failed service={} detail=\"{e}\"", self.node.id);
            }
        }
    }

    fn forward(&self, dep: &str, frame: Vec<u8>) {
        let r = self
            .cfg
            .peer_data(dep)
            .map_err(NetError::from)
            .and_then(|addr| self.node.send_datagram(&self.data, dep, addr, Message::PayloadExchangeRequest { frame }));
        if let Err(e) = r {
            self.metrics.lock().unwrap().incr("forward-failures");
            warn!("event=forward-failed service={} dep={dep} detail=\"{e}\"", self.node.id);
        }
    }

    fn bypass(&self, frame: &[u8]) {
        let mut d = Vec::with_capacity(frame.len() + 1);
        d.push(DATA_RAW);
        d.extend_from_slice(frame);
        for id in self.cfg.peers.keys() {
            if let Ok(addr) = self.cfg.peer_data(id) {
                let _ = self.data.send_to(&d, addr);
            }
        }
    }

    /// Asks the verifier about every flow of `decisions`.
    fn verify(&self, verifier: &str, decisions: &[AccessDecision]) -> Result<bool, NetError> {
        let addr = self.cfg.peer_control(verifier)?;
        let flows: BTreeSet<&FlowPattern> = decisions.iter().flat_map(|d| d.flows.iter()).collect();
        let mut verified = Vec::new();
        for flow in flows {
            match self.node.request(verifier, addr, Message::AccessVerificationRequest { flow: flow.clone() })?.message {
                Message::AccessVerificationResponse { decisions } => verified.extend(decisions),
                _ => return Err(NetError::Unexpected("to verification request")),
            }
        }
        Ok(!conflicts(decisions, &verified))
    }

    fn session_init(&self, decisions: Vec<AccessDecision>) {
        let dc = self.cfg.dep.as_ref().expect("dep section");
        let accepted = match &dc.verifier {
            None => true,
            Some(v) => match self.verify(v, &decisions) {
                Ok(ok) => ok,
                Err(e) => {
                    warn!("event=verifier-unreachable service={} fail-open={} detail=\"{e}\"", self.node.id, dc.fail_open);
                    dc.fail_open
                }
            },
        };
        let now = Timestamp::now();
        if accepted {
            debug!("event=session-init service={} decisions={}", self.node.id, decisions.len());
            self.step(|core| core.install(decisions, now));
        } else {
            warn!("event=session-conflict service={} decisions={}", self.node.id, decisions.len());
            let flows: Vec<FlowPattern> = decisions.iter().flat_map(|d| d.flows.iter().cloned()).collect();
            self.step(|core| core.install_default_deny(&flows, now));
        }
    }

    fn data_in(&self, datagram: &[u8]) {
        match datagram.split_first() {
            Some((&DATA_SEALED, rest)) => match self.node.open(rest) {
                Ok(Envelope { message: Message::PayloadExchangeRequest { frame }, .. }) => {
                    let now = Timestamp::now();
                    self.step(|core| core.ingress(frame, now));
                }
                Ok(_) => self.metrics.lock().unwrap().incr("dropped-unexpected"),
                Err(e) => {
                    self.metrics.lock().unwrap().incr(&format!("dropped-{}", e.reason()));
                    debug!("event=drop service={} reason={} detail=\"{e}\"", self.node.id, e.reason());
                }
            },
            Some((&DATA_RAW, rest)) => {
                let frame = rest.to_vec();
                self.step(|core| core.ingress_raw(frame));
            }
            _ => self.metrics.lock().unwrap().incr("dropped-malformed"),
        }
    }
}

pub fn start(cfg: NodeConfig, sockets: Sockets) -> Result<ServiceHandle, NetError> {
    let dc = cfg.dep.clone().ok_or_else(|| ConfigError::Invalid("missing [dep] section".into()))?;
    let node = Arc::new(Node::new(&cfg)?);
    let core = DepCore::new(&cfg.id, cfg.bypass_rules()?, dc.buffer, dc.rerequest_ms);
    let data = sockets.data.ok_or_else(|| ConfigError::Invalid("dep needs a data socket".into()))?;
    let device = sockets.device.ok_or_else(|| ConfigError::Invalid("dep needs a device socket".into()))?;
    let metrics: SharedMetrics = Arc::new(Mutex::new(Metrics::default()));
    let stop = Arc::new(AtomicBool::new(false));
    let mut handle = ServiceHandle::new(&cfg.id, sockets.control.local_addr()?, metrics.clone(), stop.clone());
    handle.data = Some(data.local_addr()?);
    handle.device = Some(device.local_addr()?);
    info!(
        "event=start service={} role=dep control={} data={} device={}",
        cfg.id,
        handle.control,
        data.local_addr()?,
        device.local_addr()?
    );
    let pdp = (dc.pdp.clone(), cfg.peer_control(&dc.pdp)?);
    let dep = Arc::new(Dep {
        node: node.clone(),
        device_peer: crate::config::resolve(&dc.device_peer)?,
        cfg,
        core: Mutex::new(core),
        data: data.try_clone()?,
        device: device.try_clone()?,
        pdp,
        metrics: metrics.clone(),
    });

    let d = dep.clone();
    handle.push(datagrams(device, stop.clone(), move |frame, _| {
        let now = Timestamp::now();
        let frame = frame.to_vec();
        d.step(|core| core.egress(frame, now));
    })?);
    let d = dep.clone();
    handle.push(datagrams(data, stop.clone(), move |datagram, _| d.data_in(datagram))?);
    let d = dep.clone();
    let stop_tick = stop.clone();
    handle.push(std::thread::spawn(move || {
        while !stop_tick.load(Ordering::SeqCst) {
            std::thread::sleep(Duration::from_millis(50));
            let now = Timestamp::now();
            d.step(|core| core.tick(now));
        }
    }));
    let d = dep.clone();
    let handler = Box::new(move |env: Envelope| {
        match env.message {
            Message::SessionInitialization { decisions } if env.sender == d.pdp.0 => d.session_init(decisions),
            other => {
                d.metrics.lock().unwrap().incr("dropped-unexpected-control");
                warn!("event=unexpected service={} type={} sender={}", d.node.id, other.message_type().name(), env.sender);
            }
        }
        None
    });
    handle.push(serve(sockets.control, node, metrics, stop, handler));
    Ok(handle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rtsabac_core::decision::exact_flow;
    use rtsabac_core::dissect::FrameSpec;
    use std::net::Ipv4Addr;

    const A: [u8; 6] = [0, 0x11, 0x22, 0x33, 0x44, 0x55];
    const B: [u8; 6] = [0, 0x11, 0x22, 0x33, 0x44, 0x66];

    fn frame(i: u8) -> Vec<u8> {
        FrameSpec::new()
            .eth(B, A)
            .ipv4(Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(10, 0, 0, 2))
            .udp(5000, 5001)
            .payload(vec![i; 8])
            .build()
    }

    fn flow() -> FlowPattern {
        "eth { dst-mac == 00:11:22:33:44:66 ipv4 { udp { dst-port == 5001 } } }".parse().unwrap()
    }

    fn decision(action: Action, hops: &[&str], until: u64) -> AccessDecision {
        AccessDecision::new(
            [flow()],
            action,
            hops.iter().map(|s| s.to_string()).collect(),
            Timestamp(0),
            Timestamp(until),
            BTreeSet::from(["p".to_string()]),
        )
    }

    fn forwards(actions: &[DepAction]) -> Vec<(String, Vec<u8>)> {
        actions
            .iter()
            .filter_map(|a| match a {
                DepAction::Forward { dep, frame } => Some((dep.clone(), frame.clone())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn buffers_requests_once_then_drains_fifo() {
        let mut c = DepCore::new("dep-a", vec![], 64, 1000);
        let a1 = c.egress(frame(1), Timestamp(10));
        assert!(matches!(a1.as_slice(), [DepAction::Request { .. }]));
        assert!(c.egress(frame(1), Timestamp(20)).is_empty());
        assert!(c.egress(frame(1), Timestamp(30)).is_empty());
        assert_eq!(c.pending_frames(), 3);
        assert_eq!(c.metrics.get("access-requests"), 1);
        assert!(matches!(c.tick(Timestamp(1010)).as_slice(), [DepAction::Request { .. }]));
        let out = c.install(vec![decision(Action::Grant, &["dep-b", "dep-c"], 5000)], Timestamp(40));
        let f = forwards(&out);
        assert_eq!(f.len(), 6);
        assert_eq!(f[0].0, "dep-b");
        assert_eq!(f[1].0, "dep-c");
        assert_eq!(c.pending_frames(), 0);
        assert_eq!(forwards(&c.egress(frame(1), Timestamp(50))).len(), 2);
    }

    #[test]
    fn buffer_overflow_drops_oldest() {
        let mut c = DepCore::new("dep-a", vec![], 2, 1000);
        for i in 0..3 {
            c.egress(frame(i), Timestamp(0));
        }
        assert_eq!(c.metrics.get("dropped-overflow"), 1);
        let out = c.install(vec![decision(Action::Grant, &["dep-b"], 5000)], Timestamp(1));
        let frames: Vec<Vec<u8>> = forwards(&out).into_iter().map(|(_, f)| f).collect();
        assert_eq!(frames, vec![frame(1), frame(2)]);
    }

    #[test]
    fn deny_and_expiry() {
        let mut c = DepCore::new("dep-a", vec![], 64, 1000);
        c.install(vec![decision(Action::Deny, &[], 100)], Timestamp(0));
        assert!(c.egress(frame(1), Timestamp(50)).is_empty());
        assert_eq!(c.metrics.get("dropped-denied"), 1);
        assert!(matches!(c.egress(frame(1), Timestamp(101)).as_slice(), [DepAction::Request { .. }]));
    }

    #[test]
    fn ingress_requires_self_in_nexthop() {
        let mut b = DepCore::new("dep-b", vec![], 64, 1000);
        b.install(vec![decision(Action::Grant, &["dep-b"], 100)], Timestamp(0));
        assert_eq!(b.ingress(frame(7), Timestamp(1)), vec![DepAction::Deliver { frame: frame(7) }]);
        assert!(b.ingress(frame(7), Timestamp(101)).is_empty());
        let mut c = DepCore::new("dep-c", vec![], 64, 1000);
        c.install(vec![decision(Action::Grant, &["dep-b"], 100)], Timestamp(0));
        assert!(c.ingress(frame(7), Timestamp(1)).is_empty());
        assert_eq!(c.metrics.get("dropped-no-decision"), 1);
    }

    #[test]
    fn bypass_skips_decisions() {
        let arp = FrameSpec::new().eth([0xff; 6], A).payload(vec![0; 28]).build();
        let mut arp = arp;
        arp[12] = 0x08;
        arp[13] = 0x06;
        let rule: FlowPattern = "eth { ethertype == 0x0806 }".parse().unwrap();
        let mut c = DepCore::new("dep-a", vec![(rule, Direction::Both)], 64, 1000);
        assert_eq!(c.egress(arp.clone(), Timestamp(0)), vec![DepAction::Bypass { frame: arp.clone() }]);
        assert_eq!(c.ingress_raw(arp.clone()), vec![DepAction::Deliver { frame: arp }]);
        assert!(c.ingress_raw(frame(1)).is_empty());
    }

    #[test]
    fn conflict_detection() {
        let g = decision(Action::Grant, &["dep-b"], 100);
        let d = decision(Action::Deny, &[], 100);
        assert!(!conflicts(&[g.clone()], &[g.clone()]));
        assert!(conflicts(&[g.clone()], &[d.clone()]));
        let other = AccessDecision::deny(exact_flow(&Dissector::default().dissect(&frame(1)).unwrap()), Timestamp(0), Timestamp(1), None);
        assert!(!conflicts(&[g.clone()], &[other]));
        let mut c = DepCore::new("dep-a", vec![], 64, 1000);
        c.egress(frame(1), Timestamp(0));
        assert!(forwards(&c.install_default_deny(&[flow()], Timestamp(1))).is_empty());
        assert_eq!(c.metrics.get("dropped-denied"), 1);
    }
}
