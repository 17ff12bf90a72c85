//! Raw frame parsing into access request patterns.
//!
//! Recognized stacks: Ethernet II, 802.1Q, IPv4, UDP, TCP, and the fixed
//! GOOSE/SV header either directly on Ethernet (by ethertype) or carried in
//! UDP (by a configurable port set). Anything else, including truncated
//! headers, ends the chain in an `opaque` anchor carrying the remaining
//! length.

mod builder;
pub mod pcap;

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::pattern::{
    AccessRequestPattern, Anchor, AnchorPath, Fact, Field, Layer, Value, ETHERTYPE_GOOSE,
    ETHERTYPE_IPV4, ETHERTYPE_SV, ETHERTYPE_VLAN, IPPROTO_TCP, IPPROTO_UDP,
};

pub use builder::{FrameSpec, LayerSpec};

pub const MIN_FRAME_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameOrigin {
    WireCapture,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub bytes: Vec<u8>,
    pub origin: FrameOrigin,
}

impl RawFrame {
    pub fn synthetic(bytes: Vec<u8>) -> Self {
        RawFrame { bytes, origin: FrameOrigin::Synthetic }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DissectError {
    #[error("frame of {0} bytes is shorter than an ethernet header")]
    TooShort(usize),
}

/// Frame parser with the UDP demultiplexing configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dissector {
    pub goose_udp_ports: BTreeSet<u16>,
    pub sv_udp_ports: BTreeSet<u16>,
}

impl Default for Dissector {
    fn default() -> Self {
        Dissector {
            goose_udp_ports: [102].into(),
            sv_udp_ports: [103].into(),
        }
    }
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn uint(field: Field, v: impl Into<u64>) -> Fact {
    Fact::new(field, Value::Uint(v.into()))
}

fn opaque(len: usize) -> Anchor {
    Anchor::new(Layer::Opaque, vec![uint(Field::Length, len as u64)])
}

impl Dissector {
    pub fn dissect(&self, frame: &[u8]) -> Result<AccessRequestPattern, DissectError> {
        if frame.len() < MIN_FRAME_LEN {
            return Err(DissectError::TooShort(frame.len()));
        }
        let mut anchors = Vec::with_capacity(5);
        let mut ethertype = be16(frame, 12);
        anchors.push(Anchor::new(
            Layer::Ethernet,
            vec![
                Fact::new(Field::DstMac, Value::Mac(frame[0..6].try_into().expect("6 bytes"))),
                Fact::new(Field::SrcMac, Value::Mac(frame[6..12].try_into().expect("6 bytes"))),
                uint(Field::Ethertype, ethertype),
            ],
        ));
        let mut rest = &frame[14..];

        if ethertype == ETHERTYPE_VLAN {
            if rest.len() < 4 {
                anchors.push(opaque(rest.len()));
                return Ok(AccessRequestPattern::new(anchors));
            }
            let tci = be16(rest, 0);
            ethertype = be16(rest, 2);
            anchors.push(Anchor::new(
                Layer::Vlan,
                vec![uint(Field::Pcp, tci >> 13), uint(Field::Vid, tci & 0x0fff), uint(Field::Ethertype, ethertype)],
            ));
            rest = &rest[4..];
        }

        match ethertype {
            ETHERTYPE_GOOSE => self.iec_header(Layer::Goose, rest, &mut anchors),
            ETHERTYPE_SV => self.iec_header(Layer::Sv, rest, &mut anchors),
            ETHERTYPE_IPV4 => self.ipv4(rest, &mut anchors),
            _ => anchors.push(opaque(rest.len())),
        }
        Ok(AccessRequestPattern::new(anchors))
    }

    /// GOOSE and SV share the APPID / length / reserved header.
    fn iec_header(&self, layer: Layer, rest: &[u8], anchors: &mut Vec<Anchor>) {
        if rest.len() < 8 {
            anchors.push(opaque(rest.len()));
            return;
        }
        anchors.push(Anchor::new(
            layer,
            vec![uint(Field::Appid, be16(rest, 0)), uint(Field::Length, be16(rest, 2))],
        ));
    }

    fn ipv4(&self, rest: &[u8], anchors: &mut Vec<Anchor>) {
        if rest.len() < 20 || rest[0] >> 4 != 4 {
            anchors.push(opaque(rest.len()));
            return;
        }
        let header_len = usize::from(rest[0] & 0x0f) * 4;
        let total_len = usize::from(be16(rest, 2));
        if header_len < 20 || header_len > rest.len() || total_len < header_len {
            anchors.push(opaque(rest.len()));
            return;
        }
        let protocol = rest[9];
        let src = Ipv4Addr::new(rest[12], rest[13], rest[14], rest[15]);
        let dst = Ipv4Addr::new(rest[16], rest[17], rest[18], rest[19]);
        anchors.push(Anchor::new(
            Layer::Ipv4,
            vec![
                Fact::new(Field::SrcIp, Value::Ipv4(src)),
                Fact::new(Field::DstIp, Value::Ipv4(dst)),
                uint(Field::Protocol, protocol),
            ],
        ));
        let fragment_offset = be16(rest, 6) & 0x1fff;
        let payload = &rest[header_len..total_len.min(rest.len())];
        if fragment_offset != 0 {
            anchors.push(opaque(payload.len()));
            return;
        }
        match protocol {
            IPPROTO_UDP => self.udp(payload, anchors),
            IPPROTO_TCP => self.tcp(payload, anchors),
            _ => anchors.push(opaque(payload.len())),
        }
    }

    fn udp(&self, rest: &[u8], anchors: &mut Vec<Anchor>) {
        if rest.len() < 8 {
            anchors.push(opaque(rest.len()));
            return;
        }
        let src = be16(rest, 0);
        let dst = be16(rest, 2);
        let declared = usize::from(be16(rest, 4));
        anchors.push(Anchor::new(
            Layer::Udp,
            vec![uint(Field::SrcPort, src), uint(Field::DstPort, dst)],
        ));
        let end = if declared >= 8 { declared.min(rest.len()) } else { rest.len() };
        let payload = &rest[8..end];
        let carried = |ports: &BTreeSet<u16>| ports.contains(&dst) || ports.contains(&src);
        if carried(&self.goose_udp_ports) {
            self.iec_header(Layer::Goose, payload, anchors);
        } else if carried(&self.sv_udp_ports) {
            self.iec_header(Layer::Sv, payload, anchors);
        } else {
            anchors.push(opaque(payload.len()));
        }
    }

    fn tcp(&self, rest: &[u8], anchors: &mut Vec<Anchor>) {
        if rest.len() < 20 {
            anchors.push(opaque(rest.len()));
            return;
        }
        let data_offset = usize::from(rest[12] >> 4) * 4;
        anchors.push(Anchor::new(
            Layer::Tcp,
            vec![uint(Field::SrcPort, be16(rest, 0)), uint(Field::DstPort, be16(rest, 2)), uint(Field::Flags, rest[13])],
        ));
        let payload = rest.get(data_offset.max(20)..).unwrap_or(&[]);
        anchors.push(opaque(payload.len()));
    }
}

/// Dissects with the default UDP port configuration.
pub fn dissect(frame: &RawFrame) -> Result<AccessRequestPattern, DissectError> {
    Dissector::default().dissect(&frame.bytes)
}

/// Anchor paths of a request, outermost first.
pub fn anchor_points(pattern: &AccessRequestPattern) -> Vec<AnchorPath> {
    (0..pattern.anchors().len()).map(|i| pattern.path_to(i)).collect()
}
