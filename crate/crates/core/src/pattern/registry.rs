//! Protocol layers, their fields and the structural constraints between
//! adjacent layers.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Ethernet,
    Vlan,
    Goose,
    Sv,
    Ipv4,
    Udp,
    Tcp,
    Opaque,
}

pub const ETHERTYPE_VLAN: u16 = 0x8100;
pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_GOOSE: u16 = 0x88B8;
pub const ETHERTYPE_SV: u16 = 0x88BA;
pub const IPPROTO_TCP: u8 = 6;
pub const IPPROTO_UDP: u8 = 17;

impl Layer {
    pub const ALL: [Layer; 8] = [
        Layer::Ethernet,
        Layer::Vlan,
        Layer::Goose,
        Layer::Sv,
        Layer::Ipv4,
        Layer::Udp,
        Layer::Tcp,
        Layer::Opaque,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Ethernet => "eth",
            Layer::Vlan => "vlan",
            Layer::Goose => "goose",
            Layer::Sv => "sv",
            Layer::Ipv4 => "ipv4",
            Layer::Udp => "udp",
            Layer::Tcp => "tcp",
            Layer::Opaque => "opaque",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Layer::Ethernet => 1,
            Layer::Vlan => 2,
            Layer::Goose => 3,
            Layer::Sv => 4,
            Layer::Ipv4 => 5,
            Layer::Udp => 6,
            Layer::Tcp => 7,
            Layer::Opaque => 8,
        }
    }

    pub fn from_code(code: u8) -> Option<Layer> {
        Layer::ALL.into_iter().find(|l| l.code() == code)
    }

    /// Fields a dissected anchor of this layer carries.
    pub fn fields(self) -> &'static [Field] {
        match self {
            Layer::Ethernet => &[Field::DstMac, Field::SrcMac, Field::Ethertype],
            Layer::Vlan => &[Field::Pcp, Field::Vid, Field::Ethertype],
            Layer::Goose | Layer::Sv => &[Field::Appid, Field::Length],
            Layer::Ipv4 => &[Field::SrcIp, Field::DstIp, Field::Protocol],
            Layer::Udp => &[Field::SrcPort, Field::DstPort],
            Layer::Tcp => &[Field::SrcPort, Field::DstPort, Field::Flags],
            Layer::Opaque => &[Field::Length],
        }
    }

    pub fn has_field(self, field: Field) -> bool {
        self.fields().contains(&field)
    }

    /// Layers that may directly follow this one in a protocol stack.
    pub fn allowed_children(self) -> &'static [Layer] {
        match self {
            Layer::Ethernet => &[Layer::Vlan, Layer::Goose, Layer::Sv, Layer::Ipv4, Layer::Opaque],
            Layer::Vlan => &[Layer::Goose, Layer::Sv, Layer::Ipv4, Layer::Opaque],
            Layer::Ipv4 => &[Layer::Udp, Layer::Tcp, Layer::Opaque],
            Layer::Udp => &[Layer::Goose, Layer::Sv, Layer::Opaque],
            Layer::Tcp => &[Layer::Opaque],
            Layer::Goose | Layer::Sv | Layer::Opaque => &[],
        }
    }

    pub fn ethertype(self) -> Option<u16> {
        match self {
            Layer::Vlan => Some(ETHERTYPE_VLAN),
            Layer::Ipv4 => Some(ETHERTYPE_IPV4),
            Layer::Goose => Some(ETHERTYPE_GOOSE),
            Layer::Sv => Some(ETHERTYPE_SV),
            _ => None,
        }
    }

    /// The hierarchy-constrained predicate implied by nesting `child`
    /// directly below `self`, or `None` if the nesting is not allowed.
    pub fn constraint_for(self, child: Layer) -> Option<Constraint> {
        if !self.allowed_children().contains(&child) {
            return None;
        }
        let constraint = match (self, child) {
            (Layer::Ethernet | Layer::Vlan, Layer::Opaque) => Constraint::NextLayer(child),
            (Layer::Ethernet | Layer::Vlan, _) => Constraint::FieldEquals {
                field: Field::Ethertype,
                value: u64::from(child.ethertype()?),
            },
            (Layer::Ipv4, Layer::Udp) => Constraint::FieldEquals {
                field: Field::Protocol,
                value: u64::from(IPPROTO_UDP),
            },
            (Layer::Ipv4, Layer::Tcp) => Constraint::FieldEquals {
                field: Field::Protocol,
                value: u64::from(IPPROTO_TCP),
            },
            _ => Constraint::NextLayer(child),
        };
        Some(constraint)
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Layer::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown layer '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Field {
    DstMac,
    SrcMac,
    Ethertype,
    Pcp,
    Vid,
    Appid,
    Length,
    SrcIp,
    DstIp,
    Protocol,
    SrcPort,
    DstPort,
    Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueType {
    Uint { bits: u8 },
    Mac,
    Ipv4,
}

impl Field {
    pub const ALL: [Field; 13] = [
        Field::DstMac,
        Field::SrcMac,
        Field::Ethertype,
        Field::Pcp,
        Field::Vid,
        Field::Appid,
        Field::Length,
        Field::SrcIp,
        Field::DstIp,
        Field::Protocol,
        Field::SrcPort,
        Field::DstPort,
        Field::Flags,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::DstMac => "dst-mac",
            Field::SrcMac => "src-mac",
            Field::Ethertype => "ethertype",
            Field::Pcp => "pcp",
            Field::Vid => "vid",
            Field::Appid => "appid",
            Field::Length => "length",
            Field::SrcIp => "src-ip",
            Field::DstIp => "dst-ip",
            Field::Protocol => "protocol",
            Field::SrcPort => "src-port",
            Field::DstPort => "dst-port",
            Field::Flags => "flags",
        }
    }

    pub fn code(self) -> u8 {
        Field::ALL.iter().position(|f| *f == self).unwrap_or(0) as u8 + 1
    }

    pub fn from_code(code: u8) -> Option<Field> {
        code.checked_sub(1).and_then(|i| Field::ALL.get(usize::from(i)).copied())
    }

    pub fn value_type(self) -> ValueType {
        match self {
            Field::DstMac | Field::SrcMac => ValueType::Mac,
            Field::SrcIp | Field::DstIp => ValueType::Ipv4,
            Field::Ethertype | Field::Appid | Field::SrcPort | Field::DstPort => {
                ValueType::Uint { bits: 16 }
            }
            Field::Length => ValueType::Uint { bits: 32 },
            Field::Vid => ValueType::Uint { bits: 12 },
            Field::Pcp => ValueType::Uint { bits: 3 },
            Field::Protocol | Field::Flags => ValueType::Uint { bits: 8 },
        }
    }

    /// Whether the field names the receiving side of a frame.
    pub fn is_destination(self) -> bool {
        matches!(self, Field::DstMac | Field::DstIp | Field::DstPort)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Field::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown field '{s}'"))
    }
}

/// Non-parametric predicate fully determined by the tree structure.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Constraint {
    /// The anchor's demultiplexing field names the child layer.
    FieldEquals { field: Field, value: u64 },
    /// The anchor is directly followed by the given layer.
    NextLayer(Layer),
}
