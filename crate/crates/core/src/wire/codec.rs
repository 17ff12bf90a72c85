//! Canonical binary encoding: big-endian integers, `u16`-prefixed strings,
//! `u32`-prefixed sequences, one tag byte per sum-type variant.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::decision::AccessDecision;
use crate::pattern::{
    AccessRequestPattern, Anchor, Constraint, Fact, Field, FlowPattern, Layer, Operand, PatternNode, Predicate,
    Prefix, Value,
};
use crate::policy::{Action, AttrValue, AttributeBinding, AuxExpr, AuxiliaryPredicate, CmpOp, Comparison, Policy};
use crate::Timestamp;

/// Nesting bound for patterns and predicate expressions on decode.
pub const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("body of {0} bytes exceeds the 24-bit length field")]
    BodyTooLarge(usize),
    #[error("{what} of length {len} exceeds its length field")]
    TooLong { what: &'static str, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated buffer")]
    Truncated,
    #[error("unknown protocol version {0}")]
    UnknownVersion(u8),
    #[error("unknown message type {0}")]
    UnknownMessageType(u8),
    #[error("length field overruns the buffer")]
    LengthOverrun,
    #[error("invalid encoding: {0}")]
    Invalid(String),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
}

fn invalid<T>(what: impl Into<String>) -> Result<T, DecodeError> {
    Err(DecodeError::Invalid(what.into()))
}

/// Append-only encoder. The first overflow is remembered and reported by
/// [`Writer::finish`].
#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
    error: Option<EncodeError>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn finish(self) -> Result<Vec<u8>, EncodeError> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.buf),
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn fail(&mut self, e: EncodeError) {
        self.error.get_or_insert(e);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u24(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes()[1..]);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn bytes16(&mut self, what: &'static str, bytes: &[u8]) {
        match u16::try_from(bytes.len()) {
            Ok(n) => {
                self.u16(n);
                self.raw(bytes);
            }
            Err(_) => self.fail(EncodeError::TooLong { what, len: bytes.len() }),
        }
    }

    pub fn bytes32(&mut self, what: &'static str, bytes: &[u8]) {
        self.count(what, bytes.len());
        self.raw(bytes);
    }

    pub fn str(&mut self, s: &str) {
        self.bytes16("string", s.as_bytes());
    }

    pub fn count(&mut self, what: &'static str, n: usize) {
        match u32::try_from(n) {
            Ok(n) => self.u32(n),
            Err(_) => self.fail(EncodeError::TooLong { what, len: n }),
        }
    }

    pub fn strings<'a>(&mut self, items: impl ExactSizeIterator<Item = &'a String>) {
        self.count("string list", items.len());
        for s in items {
            self.str(s);
        }
    }
}

/// Cursor over a byte slice.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    /// Like [`Reader::take`] for a length read from the buffer itself.
    pub fn take_len(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::LengthOverrun);
        }
        self.take(n)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u24(&mut self) -> Result<u32, DecodeError> {
        let [a, b, c] = self.array()?;
        Ok(u32::from_be_bytes([0, a, b, c]))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn bytes16(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.u16()? as usize;
        self.take_len(n)
    }

    pub fn bytes32(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.u32()? as usize;
        self.take_len(n)
    }

    pub fn str(&mut self) -> Result<String, DecodeError> {
        let b = self.bytes16()?;
        String::from_utf8(b.to_vec()).or_else(|_| invalid("string is not UTF-8"))
    }

    /// Element count, rejected early if the buffer cannot hold `min_size`
    /// bytes per element.
    pub fn count(&mut self, min_size: usize) -> Result<usize, DecodeError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_size) > self.remaining() {
            return Err(DecodeError::LengthOverrun);
        }
        Ok(n)
    }

    pub fn strings(&mut self) -> Result<Vec<String>, DecodeError> {
        let n = self.count(2)?;
        (0..n).map(|_| self.str()).collect()
    }

    /// Set elements must appear in strictly ascending order.
    pub fn string_set(&mut self) -> Result<BTreeSet<String>, DecodeError> {
        let v = self.strings()?;
        if v.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("set elements out of order");
        }
        Ok(v.into_iter().collect())
    }

    pub fn timestamp(&mut self) -> Result<Timestamp, DecodeError> {
        Ok(Timestamp(self.u64()?))
    }
}

/// Types with a canonical encoding.
pub trait Wire: Sized {
    fn encode(&self, w: &mut Writer);
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError>;

    fn to_bytes(&self) -> Result<Vec<u8>, EncodeError> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.finish()
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

fn layer(r: &mut Reader<'_>) -> Result<Layer, DecodeError> {
    let c = r.u8()?;
    Layer::from_code(c).ok_or_else(|| DecodeError::Invalid(format!("unknown layer {c}")))
}

fn field(r: &mut Reader<'_>) -> Result<Field, DecodeError> {
    let c = r.u8()?;
    Field::from_code(c).ok_or_else(|| DecodeError::Invalid(format!("unknown field {c}")))
}

impl Wire for Value {
    fn encode(&self, w: &mut Writer) {
        match self {
            Value::Uint(v) => {
                w.u8(1);
                w.u64(*v);
            }
            Value::Mac(m) => {
                w.u8(2);
                w.raw(m);
            }
            Value::Ipv4(a) => {
                w.u8(3);
                w.raw(&a.octets());
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            1 => Value::Uint(r.u64()?),
            2 => Value::Mac(r.array()?),
            3 => Value::Ipv4(Ipv4Addr::from(r.array::<4>()?)),
            t => return invalid(format!("unknown value tag {t}")),
        })
    }
}

impl Wire for Operand {
    fn encode(&self, w: &mut Writer) {
        match self {
            Operand::Eq(v) => {
                w.u8(1);
                v.encode(w);
            }
            Operand::InSet(set) => {
                w.u8(2);
                w.count("value set", set.len());
                set.iter().for_each(|v| v.encode(w));
            }
            Operand::Prefix(Prefix::Mac(bytes)) => {
                w.u8(3);
                w.u8(1);
                // at most six bytes by construction
                w.u8(bytes.len().min(6) as u8);
                w.raw(&bytes[..bytes.len().min(6)]);
            }
            Operand::Prefix(Prefix::Ipv4 { addr, len }) => {
                w.u8(3);
                w.u8(2);
                w.raw(&addr.octets());
                w.u8(*len);
            }
            Operand::Range(lo, hi) => {
                w.u8(4);
                w.u64(*lo);
                w.u64(*hi);
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            1 => Operand::Eq(Value::decode(r)?),
            2 => {
                let n = r.count(2)?;
                let mut set = BTreeSet::new();
                for _ in 0..n {
                    let v = Value::decode(r)?;
                    if set.last().is_some_and(|last| *last >= v) {
                        return invalid("set elements out of order");
                    }
                    set.insert(v);
                }
                Operand::InSet(set)
            }
            3 => match r.u8()? {
                1 => {
                    let n = r.u8()? as usize;
                    if n > 6 {
                        return invalid("mac prefix longer than six bytes");
                    }
                    Operand::Prefix(Prefix::Mac(r.take(n)?.to_vec()))
                }
                2 => {
                    let addr = Ipv4Addr::from(r.array::<4>()?);
                    let len = r.u8()?;
                    if len > 32 {
                        return invalid("ipv4 prefix longer than 32 bits");
                    }
                    Operand::Prefix(Prefix::Ipv4 { addr, len })
                }
                t => return invalid(format!("unknown prefix tag {t}")),
            },
            4 => Operand::Range(r.u64()?, r.u64()?),
            t => return invalid(format!("unknown operand tag {t}")),
        })
    }
}

fn encode_node(node: &PatternNode, w: &mut Writer) {
    match node {
        PatternNode::Layer { layer, children } => {
            w.u8(1);
            w.u8(layer.code());
            w.count("pattern children", children.len());
            children.iter().for_each(|c| encode_node(c, w));
        }
        PatternNode::Constrained(Constraint::FieldEquals { field, value }) => {
            w.u8(2);
            w.u8(1);
            w.u8(field.code());
            w.u64(*value);
        }
        PatternNode::Constrained(Constraint::NextLayer(l)) => {
            w.u8(2);
            w.u8(2);
            w.u8(l.code());
        }
        PatternNode::Param(p) => {
            w.u8(3);
            w.u8(p.field.code());
            p.operand.encode(w);
        }
    }
}

fn decode_node(r: &mut Reader<'_>, depth: usize) -> Result<PatternNode, DecodeError> {
    if depth > MAX_DEPTH {
        return invalid("pattern nested too deeply");
    }
    Ok(match r.u8()? {
        1 => {
            let layer = layer(r)?;
            let n = r.count(1)?;
            let children = (0..n).map(|_| decode_node(r, depth + 1)).collect::<Result<_, _>>()?;
            PatternNode::Layer { layer, children }
        }
        2 => PatternNode::Constrained(match r.u8()? {
            1 => Constraint::FieldEquals { field: field(r)?, value: r.u64()? },
            2 => Constraint::NextLayer(layer(r)?),
            t => return invalid(format!("unknown constraint tag {t}")),
        }),
        3 => PatternNode::Param(Predicate { field: field(r)?, operand: Operand::decode(r)? }),
        t => return invalid(format!("unknown pattern node tag {t}")),
    })
}

impl Wire for FlowPattern {
    fn encode(&self, w: &mut Writer) {
        encode_node(self.root(), w);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(FlowPattern::new(decode_node(r, 0)?))
    }
}

/// Canonical byte key of a flow pattern.
pub fn encode_flow(flow: &FlowPattern) -> Vec<u8> {
    let mut w = Writer::new();
    flow.encode(&mut w);
    w.buf
}

impl Wire for AccessRequestPattern {
    fn encode(&self, w: &mut Writer) {
        w.count("anchors", self.anchors().len());
        for a in self.anchors() {
            w.u8(a.layer.code());
            w.count("facts", a.facts.len());
            for f in &a.facts {
                w.u8(f.field.code());
                f.value.encode(w);
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let n = r.count(5)?;
        let mut anchors = Vec::with_capacity(n);
        for _ in 0..n {
            let layer = layer(r)?;
            let m = r.count(2)?;
            let facts = (0..m)
                .map(|_| Ok(Fact { field: field(r)?, value: Value::decode(r)? }))
                .collect::<Result<_, DecodeError>>()?;
            anchors.push(Anchor { layer, facts });
        }
        Ok(AccessRequestPattern::new(anchors))
    }
}

impl Wire for Action {
    fn encode(&self, w: &mut Writer) {
        w.u8(match self {
            Action::Grant => 1,
            Action::Deny => 2,
        });
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            1 => Ok(Action::Grant),
            2 => Ok(Action::Deny),
            t => invalid(format!("unknown action {t}")),
        }
    }
}

impl Wire for AttrValue {
    fn encode(&self, w: &mut Writer) {
        match self {
            AttrValue::Bool(b) => {
                w.u8(1);
                w.u8(*b as u8);
            }
            AttrValue::Int(i) => {
                w.u8(2);
                w.u64(*i as u64);
            }
            AttrValue::Decimal(d) => {
                w.u8(3);
                w.u64(d.to_bits());
            }
            AttrValue::Str(s) => {
                w.u8(4);
                w.str(s);
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            1 => match r.u8()? {
                0 => AttrValue::Bool(false),
                1 => AttrValue::Bool(true),
                b => return invalid(format!("bad bool {b}")),
            },
            2 => AttrValue::Int(r.u64()? as i64),
            3 => AttrValue::Decimal(f64::from_bits(r.u64()?)),
            4 => AttrValue::Str(r.str()?),
            t => return invalid(format!("unknown attribute value tag {t}")),
        })
    }
}

fn op_code(op: CmpOp) -> u8 {
    CmpOp::ALL.iter().position(|o| *o == op).expect("listed") as u8 + 1
}

fn encode_expr(e: &AuxExpr, w: &mut Writer) {
    match e {
        AuxExpr::Compare(c) => {
            w.u8(1);
            w.str(&c.key);
            w.u8(op_code(c.op));
            c.literal.encode(w);
        }
        AuxExpr::Not(inner) => {
            w.u8(2);
            encode_expr(inner, w);
        }
        AuxExpr::Any(items) => {
            w.u8(3);
            w.count("disjunction", items.len());
            items.iter().for_each(|i| encode_expr(i, w));
        }
    }
}

fn decode_expr(r: &mut Reader<'_>, depth: usize) -> Result<AuxExpr, DecodeError> {
    if depth > MAX_DEPTH {
        return invalid("predicate nested too deeply");
    }
    Ok(match r.u8()? {
        1 => {
            let key = r.str()?;
            let c = r.u8()?;
            let op = *CmpOp::ALL
                .get((c as usize).wrapping_sub(1))
                .ok_or_else(|| DecodeError::Invalid(format!("unknown operator {c}")))?;
            AuxExpr::Compare(Comparison { key, op, literal: AttrValue::decode(r)? })
        }
        2 => AuxExpr::Not(Box::new(decode_expr(r, depth + 1)?)),
        3 => {
            let n = r.count(1)?;
            AuxExpr::Any((0..n).map(|_| decode_expr(r, depth + 1)).collect::<Result<_, _>>()?)
        }
        t => return invalid(format!("unknown predicate tag {t}")),
    })
}

impl Wire for AuxiliaryPredicate {
    fn encode(&self, w: &mut Writer) {
        w.str(&self.id);
        encode_expr(&self.expr, w);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(AuxiliaryPredicate { id: r.str()?, expr: decode_expr(r, 0)? })
    }
}

impl Wire for Policy {
    fn encode(&self, w: &mut Writer) {
        w.str(&self.id);
        self.action.encode(w);
        self.flow.encode(w);
        w.u64(self.static_max_validity_ms);
        w.strings(self.nexthop.iter());
        encode_list(&self.auxiliary, w);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Policy {
            id: r.str()?,
            action: Action::decode(r)?,
            flow: FlowPattern::decode(r)?,
            static_max_validity_ms: r.u64()?,
            nexthop: r.string_set()?,
            auxiliary: decode_list(r)?,
        })
    }
}

impl Wire for AttributeBinding {
    fn encode(&self, w: &mut Writer) {
        w.str(&self.key);
        self.value.encode(w);
        w.u64(self.valid_from.0);
        w.u64(self.valid_until.0);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(AttributeBinding {
            key: r.str()?,
            value: AttrValue::decode(r)?,
            valid_from: r.timestamp()?,
            valid_until: r.timestamp()?,
        })
    }
}

impl Wire for AccessDecision {
    fn encode(&self, w: &mut Writer) {
        encode_list(&self.flows, w);
        self.action.encode(w);
        w.strings(self.nexthop.iter());
        w.u64(self.valid_from.0);
        w.u64(self.valid_until.0);
        w.strings(self.origin_policy_ids.iter());
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(AccessDecision {
            flows: decode_list(r)?,
            action: Action::decode(r)?,
            nexthop: r.string_set()?,
            valid_from: r.timestamp()?,
            valid_until: r.timestamp()?,
            origin_policy_ids: r.string_set()?,
        })
    }
}

pub fn encode_list<T: Wire>(items: &[T], w: &mut Writer) {
    w.count("list", items.len());
    items.iter().for_each(|i| i.encode(w));
}

pub fn decode_list<T: Wire>(r: &mut Reader<'_>) -> Result<Vec<T>, DecodeError> {
    let n = r.count(1)?;
    (0..n).map(|_| T::decode(r)).collect()
}
