#![allow(dead_code)]

pub mod cnf;
pub mod decision;
pub mod matching;
pub mod wire;

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

use rtsabac_core::dissect::{Dissector, FrameSpec};
use rtsabac_core::pattern::{
    AccessRequestPattern, Field, FlowPattern, Layer, Operand, PatternNode, Predicate, Prefix, Value, ValueType,
};

pub const MACS: [[u8; 6]; 4] = [
    [0x01, 0x0c, 0xcd, 0x01, 0x00, 0x01],
    [0x01, 0x0c, 0xcd, 0x01, 0x00, 0x02],
    [0x00, 0x11, 0x22, 0x33, 0x44, 0x55],
    [0x00, 0x11, 0x22, 0x33, 0x44, 0x66],
];

pub const IPS: [[u8; 4]; 4] = [[10, 0, 0, 1], [10, 0, 0, 2], [10, 0, 1, 1], [192, 168, 0, 1]];
pub const PORTS: [u16; 4] = [102, 103, 5000, 5001];

pub fn domain(field: Field) -> Vec<Value> {
    let u = |v: &[u64]| v.iter().map(|x| Value::Uint(*x)).collect();
    match field {
        Field::DstMac | Field::SrcMac => MACS.iter().map(|m| Value::Mac(*m)).collect(),
        Field::SrcIp | Field::DstIp => IPS.iter().map(|a| Value::Ipv4(Ipv4Addr::from(*a))).collect(),
        Field::SrcPort | Field::DstPort => u(&[102, 103, 5000, 5001]),
        Field::Ethertype => u(&[0x8100, 0x0800, 0x88b8, 0x88ba, 0]),
        Field::Pcp => u(&[0, 4, 7]),
        Field::Vid => u(&[1, 2, 3]),
        Field::Appid => u(&[1, 2, 3]),
        Field::Length => u(&[0, 4, 8, 12, 16, 26, 30, 46]),
        Field::Protocol => u(&[6, 17, 253]),
        Field::Flags => u(&[0x02, 0x12, 0x10]),
    }
}

fn pick<T: Clone>(rng: &mut StdRng, items: &[T]) -> T {
    items.choose(rng).expect("non-empty").clone()
}

/// Random frame over the small value domains.
pub fn random_frame(rng: &mut StdRng) -> FrameSpec {
    let mut spec = FrameSpec::new().eth(pick(rng, &MACS), pick(rng, &MACS));
    if rng.gen_bool(0.3) {
        spec = spec.vlan(pick(rng, &[0u8, 4, 7]), rng.gen_range(1..=3));
    }
    let appid = rng.gen_range(1..=3);
    spec = match rng.gen_range(0..6) {
        0 => spec.goose(appid),
        1 => spec.sv(appid),
        2 | 3 => {
            spec = spec.ipv4(Ipv4Addr::from(pick(rng, &IPS)), Ipv4Addr::from(pick(rng, &IPS)));
            let (src, dst) = (pick(rng, &PORTS), pick(rng, &PORTS));
            spec = spec.udp(src, dst);
            if dst == 102 || src == 102 {
                spec.goose(appid)
            } else if dst == 103 || src == 103 {
                spec.sv(appid)
            } else {
                spec
            }
        }
        4 => spec
            .ipv4(Ipv4Addr::from(pick(rng, &IPS)), Ipv4Addr::from(pick(rng, &IPS)))
            .tcp(pick(rng, &PORTS), pick(rng, &PORTS), pick(rng, &[0x02u8, 0x12, 0x10])),
        _ => spec,
    };
    let n = pick(rng, &[0usize, 4, 8]);
    spec.payload(vec![0xa5; n])
}

pub fn random_request(rng: &mut StdRng) -> AccessRequestPattern {
    Dissector::default().dissect(&random_frame(rng).build()).expect("built frames are long enough")
}

pub fn random_operand(rng: &mut StdRng, field: Field) -> Operand {
    let dom = domain(field);
    let one = pick(rng, &dom);
    match (field.value_type(), rng.gen_range(0..3)) {
        (_, 0) => Operand::Eq(one),
        (_, 1) => {
            let set: BTreeSet<Value> = (0..rng.gen_range(2..=3)).map(|_| pick(rng, &dom)).collect();
            Operand::InSet(set)
        }
        (ValueType::Mac, _) => {
            let Value::Mac(m) = one else { unreachable!() };
            Operand::Prefix(Prefix::Mac(m[..pick(rng, &[1usize, 3, 5])].to_vec()))
        }
        (ValueType::Ipv4, _) => {
            let Value::Ipv4(a) = one else { unreachable!() };
            Operand::Prefix(Prefix::Ipv4 { addr: a, len: pick(rng, &[8u8, 16, 24, 30]) })
        }
        (ValueType::Uint { .. }, _) => {
            let (Value::Uint(a), Value::Uint(b)) = (one, pick(rng, &dom)) else { unreachable!() };
            Operand::Range(a.min(b), a.max(b))
        }
    }
}

pub fn random_predicate(rng: &mut StdRng, layer: Layer) -> Predicate {
    let field = pick(rng, layer.fields());
    Predicate::new(field, random_operand(rng, field))
}

/// Linear layer path of a plausible frame, at most four layers long,
/// starting at any anchor.
pub fn random_layers(rng: &mut StdRng) -> Vec<Layer> {
    let chain: Vec<Layer> = random_request(rng).anchors().iter().map(|a| a.layer).collect();
    let start = rng.gen_range(0..chain.len());
    let len = rng.gen_range(1..=(chain.len() - start).min(4));
    chain[start..start + len].to_vec()
}

pub fn flow_from(layers: &[Layer], leaves: &mut dyn FnMut(Layer) -> Vec<PatternNode>) -> FlowPattern {
    let mut node: Option<PatternNode> = None;
    for layer in layers.iter().rev() {
        let mut children = leaves(*layer);
        children.extend(node.take());
        node = Some(PatternNode::layer(*layer, children));
    }
    FlowPattern::new(node.expect("at least one layer"))
}

/// Random valid flow pattern: at most four layers, up to three parametric
/// predicates per layer.
pub fn random_flow(rng: &mut StdRng) -> FlowPattern {
    let layers = random_layers(rng);
    let raw = flow_from(&layers, &mut |layer| {
        (0..rng.gen_range(0..=3)).map(|_| PatternNode::Param(random_predicate(rng, layer))).collect()
    });
    raw.normalized().expect("generated patterns are valid")
}
