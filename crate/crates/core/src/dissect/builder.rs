//! Synthetic frame construction for fixtures, tests and the benchmark.

use std::net::Ipv4Addr;

use crate::pattern::{Layer, IPPROTO_TCP, IPPROTO_UDP};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    /// `ethertype` is derived from the next layer unless given.
    Ethernet { dst: [u8; 6], src: [u8; 6], ethertype: Option<u16> },
    Vlan { pcp: u8, vid: u16 },
    Ipv4 { src: Ipv4Addr, dst: Ipv4Addr },
    Udp { src_port: u16, dst_port: u16 },
    Tcp { src_port: u16, dst_port: u16, flags: u8 },
    Goose { appid: u16 },
    Sv { appid: u16 },
    Payload(Vec<u8>),
}

impl LayerSpec {
    fn layer(&self) -> Option<Layer> {
        Some(match self {
            LayerSpec::Ethernet { .. } => Layer::Ethernet,
            LayerSpec::Vlan { .. } => Layer::Vlan,
            LayerSpec::Ipv4 { .. } => Layer::Ipv4,
            LayerSpec::Udp { .. } => Layer::Udp,
            LayerSpec::Tcp { .. } => Layer::Tcp,
            LayerSpec::Goose { .. } => Layer::Goose,
            LayerSpec::Sv { .. } => Layer::Sv,
            LayerSpec::Payload(_) => return None,
        })
    }
}

/// Outermost-first list of headers plus optional payload.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrameSpec {
    pub layers: Vec<LayerSpec>,
    /// Pad Ethernet frames to the 60-byte minimum.
    pub pad_to_min: bool,
}

impl FrameSpec {
    pub fn new() -> Self {
        FrameSpec { layers: Vec::new(), pad_to_min: true }
    }

    pub fn with(mut self, layer: LayerSpec) -> Self {
        self.layers.push(layer);
        self
    }

    pub fn eth(self, dst: [u8; 6], src: [u8; 6]) -> Self {
        self.with(LayerSpec::Ethernet { dst, src, ethertype: None })
    }

    pub fn vlan(self, pcp: u8, vid: u16) -> Self {
        self.with(LayerSpec::Vlan { pcp, vid })
    }

    pub fn ipv4(self, src: Ipv4Addr, dst: Ipv4Addr) -> Self {
        self.with(LayerSpec::Ipv4 { src, dst })
    }

    pub fn udp(self, src_port: u16, dst_port: u16) -> Self {
        self.with(LayerSpec::Udp { src_port, dst_port })
    }

    pub fn tcp(self, src_port: u16, dst_port: u16, flags: u8) -> Self {
        self.with(LayerSpec::Tcp { src_port, dst_port, flags })
    }

    pub fn goose(self, appid: u16) -> Self {
        self.with(LayerSpec::Goose { appid })
    }

    pub fn sv(self, appid: u16) -> Self {
        self.with(LayerSpec::Sv { appid })
    }

    pub fn payload(self, bytes: impl Into<Vec<u8>>) -> Self {
        self.with(LayerSpec::Payload(bytes.into()))
    }

    pub fn unpadded(mut self) -> Self {
        self.pad_to_min = false;
        self
    }

    /// Serializes innermost first so every header knows its payload.
    pub fn build(&self) -> Vec<u8> {
        let mut body: Vec<u8> = Vec::new();
        let mut inner: Option<Layer> = None;
        for spec in self.layers.iter().rev() {
            let mut header = Vec::new();
            match spec {
                LayerSpec::Payload(bytes) => {
                    let mut b = bytes.clone();
                    b.extend_from_slice(&body);
                    body = b;
                    continue;
                }
                LayerSpec::Ethernet { dst, src, ethertype } => {
                    header.extend_from_slice(dst);
                    header.extend_from_slice(src);
                    let et = ethertype.or_else(|| inner.and_then(|l| l.ethertype())).unwrap_or(0);
                    header.extend(et.to_be_bytes());
                }
                LayerSpec::Vlan { pcp, vid } => {
                    let tci = (u16::from(*pcp & 0x7) << 13) | (vid & 0x0fff);
                    header.extend(tci.to_be_bytes());
                    let et = inner.and_then(|l| l.ethertype()).unwrap_or(0);
                    header.extend(et.to_be_bytes());
                }
                LayerSpec::Ipv4 { src, dst } => {
                    let proto = match inner {
                        Some(Layer::Udp) => IPPROTO_UDP,
                        Some(Layer::Tcp) => IPPROTO_TCP,
                        _ => 0xfd,
                    };
                    let total = (20 + body.len()) as u16;
                    header.extend([0x45, 0x00]);
                    header.extend(total.to_be_bytes());
                    header.extend([0, 0, 0x40, 0x00, 64, proto, 0, 0]);
                    header.extend(src.octets());
                    header.extend(dst.octets());
                    let sum = ipv4_checksum(&header);
                    header[10..12].copy_from_slice(&sum.to_be_bytes());
                }
                LayerSpec::Udp { src_port, dst_port } => {
                    header.extend(src_port.to_be_bytes());
                    header.extend(dst_port.to_be_bytes());
                    header.extend(((8 + body.len()) as u16).to_be_bytes());
                    header.extend([0, 0]);
                }
                LayerSpec::Tcp { src_port, dst_port, flags } => {
                    header.extend(src_port.to_be_bytes());
                    header.extend(dst_port.to_be_bytes());
                    header.extend([0; 8]);
                    header.extend([0x50, *flags, 0xff, 0xff, 0, 0, 0, 0]);
                }
                LayerSpec::Goose { appid } | LayerSpec::Sv { appid } => {
                    header.extend(appid.to_be_bytes());
                    header.extend(((8 + body.len()) as u16).to_be_bytes());
                    header.extend([0; 4]);
                }
            }
            header.extend_from_slice(&body);
            body = header;
            inner = spec.layer();
        }
        if self.pad_to_min && matches!(self.layers.first(), Some(LayerSpec::Ethernet { .. })) && body.len() < 60 {
            body.resize(60, 0);
        }
        body
    }
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header.chunks(2).map(|c| u32::from(u16::from_be_bytes([c[0], c[1]]))).sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}
