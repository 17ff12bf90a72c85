//! System attributes: catalog declarations, typed values and bindings with
//! validity intervals.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttrType {
    Bool,
    Int,
    Decimal,
    Str,
}

impl AttrType {
    pub fn name(self) -> &'static str {
        match self {
            AttrType::Bool => "bool",
            AttrType::Int => "int",
            AttrType::Decimal => "decimal",
            AttrType::Str => "string",
        }
    }

    pub fn parse(s: &str) -> Option<AttrType> {
        match s {
            "bool" => Some(AttrType::Bool),
            "int" => Some(AttrType::Int),
            "decimal" => Some(AttrType::Decimal),
            "string" | "str" => Some(AttrType::Str),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    Bool(bool),
    Int(i64),
    Decimal(f64),
    Str(String),
}

impl AttrValue {
    pub fn attr_type(&self) -> AttrType {
        match self {
            AttrValue::Bool(_) => AttrType::Bool,
            AttrValue::Int(_) => AttrType::Int,
            AttrValue::Decimal(_) => AttrType::Decimal,
            AttrValue::Str(_) => AttrType::Str,
        }
    }

    /// Parses a literal: `true`/`false`, integers, decimals, or a quoted string.
    pub fn parse_literal(s: &str) -> Option<AttrValue> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix('"').and_then(|r| r.strip_suffix('"')) {
            return Some(AttrValue::Str(unescape(inner)));
        }
        match s {
            "true" => return Some(AttrValue::Bool(true)),
            "false" => return Some(AttrValue::Bool(false)),
            _ => {}
        }
        if let Ok(i) = s.parse::<i64>() {
            return Some(AttrValue::Int(i));
        }
        if s.contains('.') {
            if let Ok(d) = s.parse::<f64>() {
                return Some(AttrValue::Decimal(d));
            }
        }
        None
    }

    /// Parses a configured value of a known type; strings may be unquoted.
    pub fn parse_typed(ty: AttrType, s: &str) -> Option<AttrValue> {
        let s = s.trim();
        match ty {
            AttrType::Str => Some(match AttrValue::parse_literal(s) {
                Some(AttrValue::Str(v)) => AttrValue::Str(v),
                _ => AttrValue::Str(s.to_string()),
            }),
            AttrType::Decimal => s.parse::<f64>().ok().map(AttrValue::Decimal),
            _ => AttrValue::parse_literal(s).filter(|v| v.attr_type() == ty),
        }
    }
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(n) = chars.next() {
                out.push(n);
            }
        } else {
            out.push(c);
        }
    }
    out
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Bool(b) => write!(f, "{b}"),
            AttrValue::Int(i) => write!(f, "{i}"),
            AttrValue::Decimal(d) if d.fract() == 0.0 && d.is_finite() => write!(f, "{d:.1}"),
            AttrValue::Decimal(d) => write!(f, "{d}"),
            AttrValue::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    if c == '"' || c == '\\' {
                        f.write_str("\\")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str("\"")
            }
        }
    }
}

/// Catalog declaration of one attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttributeKey {
    pub name: String,
    pub value_type: AttrType,
    pub time_variable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("attribute '{0}' declared twice")]
    Duplicate(String),
}

/// Declared attributes, keyed by name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Catalog {
    keys: BTreeMap<String, AttributeKey>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, key: AttributeKey) -> Result<(), CatalogError> {
        if self.keys.contains_key(&key.name) {
            return Err(CatalogError::Duplicate(key.name));
        }
        self.keys.insert(key.name.clone(), key);
        Ok(())
    }

    pub fn with(mut self, name: &str, value_type: AttrType, time_variable: bool) -> Self {
        self.keys.insert(
            name.to_string(),
            AttributeKey { name: name.to_string(), value_type, time_variable },
        );
        self
    }

    pub fn get(&self, name: &str) -> Option<&AttributeKey> {
        self.keys.get(name)
    }

    pub fn keys(&self) -> impl Iterator<Item = &AttributeKey> {
        self.keys.values()
    }

    /// Parses `name type time-variable?` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Catalog, CatalogError> {
        let mut catalog = Catalog::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            catalog.declare(parse_declaration(line).map_err(|reason| CatalogError::Syntax {
                line: i + 1,
                reason,
            })?)?;
        }
        Ok(catalog)
    }
}

/// One `name type time-variable?` declaration.
pub fn parse_declaration(line: &str) -> Result<AttributeKey, String> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    let [name, ty, variable] = parts.as_slice() else {
        return Err(format!("expected 'name type time-variable?', got '{line}'"));
    };
    let value_type = AttrType::parse(ty).ok_or_else(|| format!("unknown type '{ty}'"))?;
    let time_variable = match *variable {
        "true" | "yes" | "dynamic" | "variable" => true,
        "false" | "no" | "static" | "constant" => false,
        other => return Err(format!("bad time-variable flag '{other}'")),
    };
    Ok(AttributeKey { name: name.to_string(), value_type, time_variable })
}

/// Value of an attribute during `[valid_from, valid_until]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeBinding {
    pub key: String,
    pub value: AttrValue,
    pub valid_from: Timestamp,
    pub valid_until: Timestamp,
}

impl AttributeBinding {
    pub fn new(key: &str, value: AttrValue, valid_from: Timestamp, valid_until: Timestamp) -> Self {
        AttributeBinding { key: key.to_string(), value, valid_from, valid_until }
    }

    pub fn is_valid_at(&self, now: Timestamp) -> bool {
        self.valid_from <= now && now <= self.valid_until
    }
}

/// Bindings indexed by attribute name.
pub type BindingSet = BTreeMap<String, AttributeBinding>;

pub fn binding_set(bindings: impl IntoIterator<Item = AttributeBinding>) -> BindingSet {
    bindings.into_iter().map(|b| (b.key.clone(), b)).collect()
}
