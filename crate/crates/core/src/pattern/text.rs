//! Text form of flow patterns used in policy files.
//!
//! ```text
//! pattern := layer
//! layer   := LAYER [ "{" item* "}" ]
//! item    := layer | clause [ "," | ";" ]
//! clause  := FIELD "==" value
//!          | FIELD "in" "[" value { "," value } "]"
//!          | FIELD "prefix" (MAC-OCTETS | A.B.C.D/LEN)
//!          | FIELD "range" INT ".." INT
//! ```
//!
//! Values are typed by the field: integers are decimal or `0x` hex, MAC
//! addresses are colon-separated octets, IPv4 addresses dotted quads.
//! Hierarchy-constrained predicates are never written; they are derived.
//!
//! Example: `eth { dst-mac prefix 01:0c:cd goose { appid == 5 } }`

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use super::{Field, FlowPattern, Layer, Operand, PatternNode, PatternViolation, Prefix, Value, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextError {
    #[error("unexpected end of pattern")]
    UnexpectedEnd,
    #[error("unexpected token '{0}'")]
    Unexpected(String),
    #[error("{0}")]
    BadValue(String),
    #[error("invalid pattern: {}", join_violations(.0))]
    Invalid(Vec<PatternViolation>),
}

fn join_violations(v: &[PatternViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Open,
    Close,
    OpenSet,
    CloseSet,
    Sep,
    EqEq,
    Word(String),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Open => f.write_str("{"),
            Token::Close => f.write_str("}"),
            Token::OpenSet => f.write_str("["),
            Token::CloseSet => f.write_str("]"),
            Token::Sep => f.write_str(","),
            Token::EqEq => f.write_str("=="),
            Token::Word(w) => f.write_str(w),
        }
    }
}

fn tokenize(input: &str) -> Result<Vec<Token>, TextError> {
    let mut out = Vec::new();
    let mut chars = input.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            c if c.is_whitespace() => {}
            '{' => out.push(Token::Open),
            '}' => out.push(Token::Close),
            '[' => out.push(Token::OpenSet),
            ']' => out.push(Token::CloseSet),
            ',' | ';' => out.push(Token::Sep),
            '=' => {
                if chars.next() != Some('=') {
                    return Err(TextError::Unexpected("=".into()));
                }
                out.push(Token::EqEq);
            }
            _ => {
                let mut word = String::from(c);
                while let Some(&n) = chars.peek() {
                    if n.is_whitespace() || "{}[],;=".contains(n) {
                        break;
                    }
                    word.push(n);
                    chars.next();
                }
                out.push(Token::Word(word));
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<Token, TextError> {
        let t = self.tokens.get(self.pos).cloned().ok_or(TextError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(t)
    }

    fn word(&mut self) -> Result<String, TextError> {
        match self.next()? {
            Token::Word(w) => Ok(w),
            other => Err(TextError::Unexpected(other.to_string())),
        }
    }

    fn layer(&mut self) -> Result<PatternNode, TextError> {
        let name = self.word()?;
        let layer: Layer = name.parse().map_err(|_| TextError::Unexpected(name.clone()))?;
        let mut children = Vec::new();
        if self.peek() == Some(&Token::Open) {
            self.pos += 1;
            loop {
                match self.peek() {
                    Some(Token::Close) => {
                        self.pos += 1;
                        break;
                    }
                    Some(Token::Sep) => self.pos += 1,
                    Some(Token::Word(w)) if w.parse::<Layer>().is_ok() => {
                        children.push(self.layer()?);
                    }
                    Some(Token::Word(_)) => children.push(self.clause()?),
                    Some(other) => return Err(TextError::Unexpected(other.to_string())),
                    None => return Err(TextError::UnexpectedEnd),
                }
            }
        }
        Ok(PatternNode::Layer { layer, children })
    }

    fn clause(&mut self) -> Result<PatternNode, TextError> {
        let name = self.word()?;
        let field: Field = name.parse().map_err(TextError::BadValue)?;
        let operand = match self.next()? {
            Token::EqEq => Operand::Eq(parse_value(field, &self.word()?)?),
            Token::Word(op) if op == "in" => {
                if self.next()? != Token::OpenSet {
                    return Err(TextError::BadValue("expected '[' after 'in'".into()));
                }
                let mut set = BTreeSet::new();
                loop {
                    match self.next()? {
                        Token::CloseSet => break,
                        Token::Sep => {}
                        Token::Word(w) => {
                            set.insert(parse_value(field, &w)?);
                        }
                        other => return Err(TextError::Unexpected(other.to_string())),
                    }
                }
                Operand::InSet(set)
            }
            Token::Word(op) if op == "prefix" => Operand::Prefix(parse_prefix(field, &self.word()?)?),
            Token::Word(op) if op == "range" => {
                let text = self.word()?;
                let (lo, hi) = text
                    .split_once("..")
                    .ok_or_else(|| TextError::BadValue(format!("bad range '{text}'")))?;
                Operand::Range(parse_uint(lo)?, parse_uint(hi)?)
            }
            other => return Err(TextError::Unexpected(other.to_string())),
        };
        Ok(PatternNode::param(field, operand))
    }
}

fn parse_uint(s: &str) -> Result<u64, TextError> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|_| TextError::BadValue(format!("bad integer '{s}'")))
}

fn parse_octets(s: &str) -> Result<Vec<u8>, TextError> {
    s.split([':', '-'])
        .map(|o| u8::from_str_radix(o, 16).map_err(|_| TextError::BadValue(format!("bad mac '{s}'"))))
        .collect()
}

pub fn parse_mac(s: &str) -> Result<[u8; 6], TextError> {
    parse_octets(s)?
        .try_into()
        .map_err(|_| TextError::BadValue(format!("bad mac '{s}'")))
}

fn parse_value(field: Field, s: &str) -> Result<Value, TextError> {
    match field.value_type() {
        ValueType::Uint { .. } => parse_uint(s).map(Value::Uint),
        ValueType::Mac => parse_mac(s).map(Value::Mac),
        ValueType::Ipv4 => s
            .parse::<Ipv4Addr>()
            .map(Value::Ipv4)
            .map_err(|_| TextError::BadValue(format!("bad ipv4 address '{s}'"))),
    }
}

fn parse_prefix(field: Field, s: &str) -> Result<Prefix, TextError> {
    match field.value_type() {
        ValueType::Mac => parse_octets(s).map(Prefix::Mac),
        ValueType::Ipv4 => {
            let (addr, len) = s
                .split_once('/')
                .ok_or_else(|| TextError::BadValue(format!("bad cidr '{s}'")))?;
            let addr = addr
                .parse::<Ipv4Addr>()
                .map_err(|_| TextError::BadValue(format!("bad cidr '{s}'")))?;
            let len = len.parse::<u8>().map_err(|_| TextError::BadValue(format!("bad cidr '{s}'")))?;
            Ok(Prefix::Ipv4 { addr, len })
        }
        ValueType::Uint { .. } => Err(TextError::BadValue(format!("prefix does not apply to {field}"))),
    }
}

/// Parses without validation.
pub fn parse_raw(input: &str) -> Result<FlowPattern, TextError> {
    let mut parser = Parser { tokens: tokenize(input)?, pos: 0 };
    let root = parser.layer()?;
    if let Some(t) = parser.peek() {
        return Err(TextError::Unexpected(t.to_string()));
    }
    Ok(FlowPattern::new(root))
}

/// Parses, validates and normalizes a flow pattern.
pub fn parse_flow(input: &str) -> Result<FlowPattern, TextError> {
    parse_raw(input)?.normalized().map_err(TextError::Invalid)
}

impl std::str::FromStr for FlowPattern {
    type Err = TextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_flow(s)
    }
}

struct FieldValue<'a>(Field, &'a Value);

impl fmt::Display for FieldValue<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.0, self.1) {
            (Field::Ethertype, Value::Uint(v)) => write!(f, "0x{v:04x}"),
            (_, v) => write!(f, "{v}"),
        }
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, node: &PatternNode) -> fmt::Result {
    match node {
        PatternNode::Layer { layer, children } => {
            write!(f, "{layer}")?;
            let visible: Vec<&PatternNode> =
                children.iter().filter(|c| !matches!(c, PatternNode::Constrained(_))).collect();
            if !visible.is_empty() {
                f.write_str(" {")?;
                for child in visible {
                    f.write_str(" ")?;
                    write_node(f, child)?;
                }
                f.write_str(" }")?;
            }
            Ok(())
        }
        PatternNode::Constrained(_) => Ok(()),
        PatternNode::Param(p) => {
            write!(f, "{} ", p.field)?;
            match &p.operand {
                Operand::Eq(v) => write!(f, "== {}", FieldValue(p.field, v)),
                Operand::InSet(set) => {
                    f.write_str("in [")?;
                    for (i, v) in set.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        write!(f, "{}", FieldValue(p.field, v))?;
                    }
                    f.write_str("]")
                }
                Operand::Prefix(Prefix::Mac(bytes)) => {
                    f.write_str("prefix ")?;
                    super::write_mac(f, bytes)
                }
                Operand::Prefix(Prefix::Ipv4 { addr, len }) => write!(f, "prefix {addr}/{len}"),
                Operand::Range(lo, hi) => write!(f, "range {lo}..{hi}"),
            }
        }
    }
}

impl fmt::Display for FlowPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, self.root())
    }
}
