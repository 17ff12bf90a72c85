use std::net::{Ipv4Addr, UdpSocket};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use rtsabac_core::dissect::FrameSpec;
use rtsabac_core::policy::{Action, Policy};
use rtsabac_core::wire::{CrudOp, CrudStatus, Message, Scheme};
use rtsabac_services::config::{BypassConfig, Direction, EndpointConfig};
use rtsabac_services::local::{Topology, TopologySpec, DEP_A, DEP_B, PDP, VERIFIER};
use rtsabac_services::node::{Node, DATA_SEALED};

const A_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x0a];
const B_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x0b];

struct Fixture {
    topo: Topology,
    dev_a: UdpSocket,
    dev_b: UdpSocket,
}

fn fixture(scheme: Scheme, tweak: impl FnOnce(&mut TopologySpec)) -> Fixture {
    let dev_a = UdpSocket::bind("127.0.0.1:0").unwrap();
    let dev_b = UdpSocket::bind("127.0.0.1:0").unwrap();
    for s in [&dev_a, &dev_b] {
        s.set_read_timeout(Some(Duration::from_millis(50))).unwrap();
    }
    let mut spec = TopologySpec::new(scheme, dev_a.local_addr().unwrap(), dev_b.local_addr().unwrap());
    spec.protect_a = EndpointConfig { mac: Some("02:00:00:00:00:0a".into()), ip: None, port: None };
    spec.protect_b = EndpointConfig { mac: Some("02:00:00:00:00:0b".into()), ip: None, port: None };
    tweak(&mut spec);
    let topo = Topology::start(&spec).unwrap();
    assert!(topo.wait_ready(Duration::from_secs(5)));
    Fixture { topo, dev_a, dev_b }
}

fn frame(dst_port: u16, payload: &[u8]) -> Vec<u8> {
    FrameSpec::new()
        .eth(B_MAC, A_MAC)
        .ipv4(Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(10, 0, 0, 2))
        .udp(40000, dst_port)
        .payload(payload.to_vec())
        .build()
}

fn a_to_b(id: &str) -> Policy {
    Policy::new(id, Action::Grant, "eth { dst-mac == 02:00:00:00:00:0b ipv4 { udp { dst-port == 5001 } } }".parse().unwrap())
}

fn collect(sock: &UdpSocket, window: Duration) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut buf = [0u8; 2048];
    let end = Instant::now() + window;
    while Instant::now() < end {
        if let Ok((n, _)) = sock.recv_from(&mut buf) {
            out.push(buf[..n].to_vec());
        }
    }
    out
}

impl Fixture {
    fn send_a(&self, frame: &[u8]) {
        self.dev_a.send_to(frame, self.topo.device(DEP_A)).unwrap();
    }
}

#[test]
fn empty_policy_set_delivers_nothing() {
    let f = fixture(Scheme::HmacSha512, |_| {});
    let mut rng = StdRng::seed_from_u64(3);
    for i in 0..100u32 {
        let port = rng.gen_range(1..u16::MAX);
        let len = rng.gen_range(0..64);
        let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        f.send_a(&frame(port, &[&i.to_be_bytes()[..], &payload].concat()));
    }
    assert!(collect(&f.dev_b, Duration::from_millis(500)).is_empty());
    let m = f.topo.shutdown();
    assert_eq!(m[DEP_B].get("delivered"), 0);
    assert_eq!(m[DEP_A].get("forwarded"), 0);
    assert!(m[PDP].get("default-decisions") >= 1);
}

#[test]
fn granted_frames_arrive_bit_exact_and_in_order() {
    for scheme in [Scheme::Noop, Scheme::HmacSha512, Scheme::Ed25519] {
        let f = fixture(scheme, |_| {});
        let reply = f.topo.add_policy(a_to_b("p-ab")).unwrap();
        assert!(matches!(reply, Message::PolicyCrudResponse { status: CrudStatus::Ok, .. }));
        let sent: Vec<Vec<u8>> = (0..20u8).map(|i| frame(5001, &[i; 12])).collect();
        for s in &sent {
            f.send_a(s);
        }
        let got = collect(&f.dev_b, Duration::from_millis(600));
        assert_eq!(got, sent, "{}", scheme.name());
        let m = f.topo.shutdown();
        assert_eq!(m[DEP_A].get("access-requests"), 1);
        assert_eq!(m[PDP].get("rx-access-request"), 1);
        assert_eq!(m[DEP_B].get("delivered"), 20);
    }
}

#[test]
fn forged_and_replayed_envelopes_are_dropped() {
    let f = fixture(Scheme::HmacSha512, |_| {});
    f.topo.add_policy(a_to_b("p-ab")).unwrap();
    f.send_a(&frame(5001, b"warm-up"));
    assert_eq!(collect(&f.dev_b, Duration::from_millis(300)).len(), 1);

    let data_b = f.topo.service(DEP_B).data.unwrap();
    let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
    let real = Node::new(&f.topo.configs[DEP_A]).unwrap();
    let mut forger_cfg = f.topo.configs[DEP_A].clone();
    forger_cfg.key = Some("text:wrong".into());
    let forger = Node::new(&forger_cfg).unwrap();

    forger.send_datagram(&sock, DEP_B, data_b, Message::PayloadExchangeRequest { frame: frame(5001, b"forged") }).unwrap();
    let bytes = real.seal(DEP_B, Message::PayloadExchangeRequest { frame: frame(5001, b"genuine") }).unwrap();
    let datagram = [&[DATA_SEALED][..], &bytes].concat();
    sock.send_to(&datagram, data_b).unwrap();
    sock.send_to(&datagram, data_b).unwrap();
    let mut flipped = datagram.clone();
    flipped[20] ^= 1;
    sock.send_to(&flipped, data_b).unwrap();

    let got = collect(&f.dev_b, Duration::from_millis(300));
    assert_eq!(got, vec![frame(5001, b"genuine")]);
    let m = f.topo.shutdown();
    assert!(m[DEP_B].get("dropped-auth") >= 2);
    assert_eq!(m[DEP_B].get("dropped-replay"), 1);
}

#[test]
fn bypass_frames_skip_the_protocol() {
    let f = fixture(Scheme::HmacSha512, |s| {
        s.bypass = vec![BypassConfig { flow: "eth { ethertype == 0x0806 }".into(), direction: Direction::Both }];
    });
    let mut arp = FrameSpec::new().eth([0xff; 6], A_MAC).payload(vec![1; 28]).build();
    arp[12..14].copy_from_slice(&[0x08, 0x06]);
    f.send_a(&arp);
    let got = collect(&f.dev_b, Duration::from_millis(300));
    assert_eq!(got, vec![arp]);
    let m = f.topo.shutdown();
    assert_eq!(m[PDP].get("rx-access-request"), 0);
    assert_eq!(m[DEP_A].get("bypassed"), 1);
}

#[test]
fn deleted_policy_stops_new_sessions_after_expiry() {
    let f = fixture(Scheme::Noop, |_| {});
    f.topo.add_policy(a_to_b("p-ab").with_validity(400)).unwrap();
    f.send_a(&frame(5001, b"one"));
    assert_eq!(collect(&f.dev_b, Duration::from_millis(200)).len(), 1);
    let reply = f.topo.crud(CrudOp::Delete, "p-ab", None).unwrap();
    assert!(matches!(reply, Message::PolicyCrudResponse { status: CrudStatus::Ok, revision: 2, .. }));
    f.send_a(&frame(5001, b"still valid"));
    assert_eq!(collect(&f.dev_b, Duration::from_millis(100)).len(), 1);
    std::thread::sleep(Duration::from_millis(300));
    f.send_a(&frame(5001, b"expired"));
    assert!(collect(&f.dev_b, Duration::from_millis(400)).is_empty());
    let m = f.topo.shutdown();
    assert_eq!(m[PDP].get("default-decisions"), 1);
    assert_eq!(m[PDP].get("rx-policy-exchange-incremental"), 2);
}

#[test]
fn verifier_agreement_and_fail_closed() {
    let mut f = fixture(Scheme::HmacSha512, |s| s.verifier = true);
    f.topo.add_policy(a_to_b("p-ab").with_validity(300)).unwrap();
    f.send_a(&frame(5001, b"verified"));
    assert_eq!(collect(&f.dev_b, Duration::from_millis(300)).len(), 1);
    f.topo.services.remove(VERIFIER).unwrap().shutdown();
    std::thread::sleep(Duration::from_millis(200));
    f.send_a(&frame(5001, b"unverifiable"));
    assert!(collect(&f.dev_b, Duration::from_millis(1500)).is_empty());
    let m = f.topo.shutdown();
    assert!(m[DEP_A].get("conflicts") >= 1);
}

#[test]
fn services_answer_health_pings() {
    let f = fixture(Scheme::Ed25519, |_| {});
    let h = f.topo.healthy();
    assert_eq!(h.len(), 5);
    assert!(h.values().all(|ok| *ok));
    f.topo.shutdown();
}
