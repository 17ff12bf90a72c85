//! Flow patterns and access request patterns.
//!
//! A [`FlowPattern`] is a rooted tree of frame predicates. Hierarchy nodes
//! name protocol layers and give the tree its shape; every other node is a
//! leaf predicate evaluated against the facts of the anchor it hangs off.
//! An [`AccessRequestPattern`] is the fact tree of one concrete frame: a
//! linear chain of anchors, one per dissected layer.
//!
//! Matching aligns the flow's root with one anchor of the request and
//! requires every predicate below it to hold. Nested matching repeats this
//! at every anchor, outermost first.

mod registry;
pub mod text;

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

pub use registry::{
    Constraint, Field, Layer, ValueType, ETHERTYPE_GOOSE, ETHERTYPE_IPV4, ETHERTYPE_SV,
    ETHERTYPE_VLAN, IPPROTO_TCP, IPPROTO_UDP,
};

/// A concrete typed value of a frame field.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Uint(u64),
    Mac([u8; 6]),
    Ipv4(Ipv4Addr),
}

impl Value {
    fn conforms_to(&self, ty: ValueType) -> bool {
        match (self, ty) {
            (Value::Uint(v), ValueType::Uint { bits }) => bits >= 64 || *v < (1u64 << bits),
            (Value::Mac(_), ValueType::Mac) | (Value::Ipv4(_), ValueType::Ipv4) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Uint(v) => write!(f, "{v}"),
            Value::Mac(m) => write_mac(f, m),
            Value::Ipv4(a) => write!(f, "{a}"),
        }
    }
}

fn write_mac(f: &mut fmt::Formatter<'_>, bytes: &[u8]) -> fmt::Result {
    for (i, b) in bytes.iter().enumerate() {
        if i > 0 {
            f.write_str(":")?;
        }
        write!(f, "{b:02x}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Prefix {
    /// Leading octets of a MAC address (1 to 6).
    Mac(Vec<u8>),
    /// CIDR block; host bits of `addr` are always zero.
    Ipv4 { addr: Ipv4Addr, len: u8 },
}

/// Comparison carried by a parametric predicate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operand {
    Eq(Value),
    InSet(BTreeSet<Value>),
    Prefix(Prefix),
    /// Inclusive integer range.
    Range(u64, u64),
}

impl Operand {
    /// Normal form: one-element sets and degenerate ranges become `Eq`,
    /// CIDR host bits are cleared.
    pub fn normalized(self) -> Operand {
        match self {
            Operand::InSet(set) if set.len() == 1 => {
                Operand::Eq(set.into_iter().next().expect("one element"))
            }
            Operand::Range(lo, hi) if lo == hi => Operand::Eq(Value::Uint(lo)),
            Operand::Prefix(Prefix::Ipv4 { addr, len }) => {
                let len = len.min(32);
                Operand::Prefix(Prefix::Ipv4 { addr: mask_ipv4(addr, len), len })
            }
            other => other,
        }
    }

    fn check(&self, field: Field) -> Result<(), String> {
        let ty = field.value_type();
        match self {
            Operand::Eq(v) if v.conforms_to(ty) => Ok(()),
            Operand::Eq(v) => Err(format!("value {v} is not a valid {field}")),
            Operand::InSet(set) if set.is_empty() => Err("empty set".into()),
            Operand::InSet(set) => match set.iter().find(|v| !v.conforms_to(ty)) {
                Some(v) => Err(format!("value {v} is not a valid {field}")),
                None => Ok(()),
            },
            Operand::Prefix(Prefix::Mac(bytes)) if ty == ValueType::Mac => {
                if (1..=6).contains(&bytes.len()) {
                    Ok(())
                } else {
                    Err("mac prefix must have 1 to 6 octets".into())
                }
            }
            Operand::Prefix(Prefix::Ipv4 { len, .. }) if ty == ValueType::Ipv4 => {
                if *len <= 32 {
                    Ok(())
                } else {
                    Err("prefix length exceeds 32".into())
                }
            }
            Operand::Prefix(_) => Err(format!("prefix does not apply to {field}")),
            Operand::Range(lo, hi) => match ty {
                ValueType::Uint { .. } if lo > hi => Err("empty range".into()),
                ValueType::Uint { .. }
                    if !Value::Uint(*hi).conforms_to(ty) =>
                {
                    Err(format!("range bound {hi} is not a valid {field}"))
                }
                ValueType::Uint { .. } => Ok(()),
                _ => Err(format!("range does not apply to {field}")),
            },
        }
    }

    /// Evaluates the comparison; operands of the wrong type never match.
    pub fn eval(&self, fact: &Value) -> bool {
        match self {
            Operand::Eq(v) => v == fact,
            Operand::InSet(set) => set.contains(fact),
            Operand::Prefix(Prefix::Mac(bytes)) => match fact {
                Value::Mac(m) => m.starts_with(bytes),
                _ => false,
            },
            Operand::Prefix(Prefix::Ipv4 { addr, len }) => match fact {
                Value::Ipv4(a) => mask_ipv4(*a, *len) == mask_ipv4(*addr, *len),
                _ => false,
            },
            Operand::Range(lo, hi) => match fact {
                Value::Uint(v) => lo <= v && v <= hi,
                _ => false,
            },
        }
    }
}

fn mask_ipv4(addr: Ipv4Addr, len: u8) -> Ipv4Addr {
    let mask = if len == 0 { 0 } else { u32::MAX << (32 - u32::from(len.min(32))) };
    Ipv4Addr::from(u32::from(addr) & mask)
}

/// A parametric frame predicate: `field <op> operand`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Predicate {
    pub field: Field,
    pub operand: Operand,
}

impl Predicate {
    pub fn new(field: Field, operand: Operand) -> Self {
        Predicate { field, operand: operand.normalized() }
    }

    pub fn eq(field: Field, value: Value) -> Self {
        Predicate::new(field, Operand::Eq(value))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PatternNode {
    Layer { layer: Layer, children: Vec<PatternNode> },
    Constrained(Constraint),
    Param(Predicate),
}

impl PatternNode {
    pub fn layer(layer: Layer, children: Vec<PatternNode>) -> Self {
        PatternNode::Layer { layer, children }
    }

    pub fn param(field: Field, operand: Operand) -> Self {
        PatternNode::Param(Predicate::new(field, operand))
    }

    pub fn is_layer(&self) -> bool {
        matches!(self, PatternNode::Layer { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("flow pattern root is not a hierarchy predicate")]
    RootNotHierarchy,
    #[error("nonlinear hierarchy below '{0}'")]
    NonlinearHierarchy(Layer),
    #[error("invalid pattern: {0}")]
    Invalid(String),
}

/// One problem found by [`FlowPattern::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternViolation {
    #[error("root is not a hierarchy predicate")]
    RootNotHierarchy,
    #[error("nonlinear hierarchy below '{0}'")]
    NonlinearHierarchy(Layer),
    #[error("layer '{child}' cannot follow '{parent}'")]
    InvalidNesting { parent: Layer, child: Layer },
    #[error("field '{field}' does not belong to layer '{layer}'")]
    FieldNotInLayer { field: Field, layer: Layer },
    #[error("ill-typed operand for '{field}': {reason}")]
    OperandType { field: Field, reason: String },
    #[error("hierarchy-constrained predicate below '{0}' does not follow from the tree")]
    ForeignConstraint(Layer),
}

/// Predicate tree describing a set of frames.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowPattern {
    root: PatternNode,
}

impl FlowPattern {
    /// Wraps a tree as-is; see [`FlowPattern::normalized`] for the checked form.
    pub fn new(root: PatternNode) -> Self {
        FlowPattern { root }
    }

    pub fn root(&self) -> &PatternNode {
        &self.root
    }

    pub fn root_layer(&self) -> Option<Layer> {
        match &self.root {
            PatternNode::Layer { layer, .. } => Some(*layer),
            _ => None,
        }
    }

    /// Full invariant check: shape, layer nesting, field placement, operand
    /// typing, and constrained predicates agreeing with the structure.
    pub fn validate(&self) -> Vec<PatternViolation> {
        let mut out = Vec::new();
        if !self.root.is_layer() {
            out.push(PatternViolation::RootNotHierarchy);
            return out;
        }
        validate_node(&self.root, &mut out);
        out
    }

    /// Validates, derives hierarchy-constrained predicates for every layer
    /// edge and puts the tree in canonical sibling order.
    pub fn normalized(&self) -> Result<FlowPattern, Vec<PatternViolation>> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(violations);
        }
        Ok(FlowPattern { root: normalize_node(&self.root) })
    }

    fn check_structure(&self) -> Result<(), PatternError> {
        if !self.root.is_layer() {
            return Err(PatternError::RootNotHierarchy);
        }
        check_linear(&self.root)
    }

    /// Same tree with leaves sorted and the hierarchy child last. Two
    /// patterns differing only in sibling order canonicalize identically.
    pub fn canonicalized(&self) -> FlowPattern {
        FlowPattern { root: canonical_node(&self.root) }
    }

    /// Number of parametric predicates in the tree.
    pub fn parametric_count(&self) -> usize {
        fn count(node: &PatternNode) -> usize {
            match node {
                PatternNode::Layer { children, .. } => children.iter().map(count).sum(),
                PatternNode::Param(_) => 1,
                PatternNode::Constrained(_) => 0,
            }
        }
        count(&self.root)
    }

    /// Parametric predicates on destination fields (`dst-mac`, `dst-ip`, `dst-port`).
    pub fn destination_predicates(&self) -> Vec<&Predicate> {
        fn walk<'a>(node: &'a PatternNode, out: &mut Vec<&'a Predicate>) {
            match node {
                PatternNode::Layer { children, .. } => {
                    children.iter().for_each(|c| walk(c, out));
                }
                PatternNode::Param(p) if p.field.is_destination() => out.push(p),
                _ => {}
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }
}

fn validate_node(node: &PatternNode, out: &mut Vec<PatternViolation>) {
    let PatternNode::Layer { layer, children } = node else {
        return;
    };
    let hierarchy: Vec<&PatternNode> = children.iter().filter(|c| c.is_layer()).collect();
    if hierarchy.len() > 1 {
        out.push(PatternViolation::NonlinearHierarchy(*layer));
    }
    for child in children {
        match child {
            PatternNode::Layer { layer: inner, .. } => {
                if layer.constraint_for(*inner).is_none() {
                    out.push(PatternViolation::InvalidNesting { parent: *layer, child: *inner });
                }
                validate_node(child, out);
            }
            PatternNode::Param(p) => {
                if !layer.has_field(p.field) {
                    out.push(PatternViolation::FieldNotInLayer { field: p.field, layer: *layer });
                } else if let Err(reason) = p.operand.check(p.field) {
                    out.push(PatternViolation::OperandType { field: p.field, reason });
                }
            }
            PatternNode::Constrained(c) => {
                let derived = match hierarchy.as_slice() {
                    [PatternNode::Layer { layer: inner, .. }] => layer.constraint_for(*inner),
                    _ => None,
                };
                if derived.as_ref() != Some(c) {
                    out.push(PatternViolation::ForeignConstraint(*layer));
                }
            }
        }
    }
}

fn normalize_node(node: &PatternNode) -> PatternNode {
    match node {
        PatternNode::Layer { layer, children } => {
            let mut out: Vec<PatternNode> = Vec::with_capacity(children.len() + 1);
            let mut hierarchy = None;
            for child in children {
                match child {
                    PatternNode::Layer { layer: inner, .. } => {
                        if let Some(c) = layer.constraint_for(*inner) {
                            out.push(PatternNode::Constrained(c));
                        }
                        hierarchy = Some(normalize_node(child));
                    }
                    PatternNode::Constrained(_) => {}
                    PatternNode::Param(p) => {
                        out.push(PatternNode::Param(Predicate::new(p.field, p.operand.clone())));
                    }
                }
            }
            out.sort();
            out.dedup();
            out.extend(hierarchy);
            PatternNode::Layer { layer: *layer, children: out }
        }
        other => other.clone(),
    }
}

fn canonical_node(node: &PatternNode) -> PatternNode {
    match node {
        PatternNode::Layer { layer, children } => {
            let mut leaves: Vec<PatternNode> =
                children.iter().filter(|c| !c.is_layer()).cloned().collect();
            leaves.sort();
            let mut layers: Vec<PatternNode> =
                children.iter().filter(|c| c.is_layer()).map(canonical_node).collect();
            layers.sort();
            leaves.extend(layers);
            PatternNode::Layer { layer: *layer, children: leaves }
        }
        other => other.clone(),
    }
}

fn check_linear(node: &PatternNode) -> Result<(), PatternError> {
    if let PatternNode::Layer { layer, children } = node {
        let mut seen = false;
        for child in children.iter().filter(|c| c.is_layer()) {
            if seen {
                return Err(PatternError::NonlinearHierarchy(*layer));
            }
            seen = true;
            check_linear(child)?;
        }
    }
    Ok(())
}

/// A concrete field value attached to an anchor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fact {
    pub field: Field,
    pub value: Value,
}

impl Fact {
    pub fn new(field: Field, value: Value) -> Self {
        Fact { field, value }
    }
}

/// One dissected layer: the anchor point plus its fact leaves.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Anchor {
    pub layer: Layer,
    pub facts: Vec<Fact>,
}

impl Anchor {
    pub fn new(layer: Layer, facts: Vec<Fact>) -> Self {
        Anchor { layer, facts }
    }

    pub fn fact(&self, field: Field) -> Option<&Value> {
        self.facts.iter().find(|f| f.field == field).map(|f| &f.value)
    }
}

/// Fact tree of one frame: a linear chain of anchors, outermost first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct AccessRequestPattern {
    anchors: Vec<Anchor>,
}

impl AccessRequestPattern {
    pub fn new(anchors: Vec<Anchor>) -> Self {
        AccessRequestPattern { anchors }
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// The chain starting at anchor `index`.
    pub fn subtree(&self, index: usize) -> AccessRequestPattern {
        AccessRequestPattern { anchors: self.anchors.get(index..).unwrap_or(&[]).to_vec() }
    }

    pub fn path_to(&self, index: usize) -> AnchorPath {
        AnchorPath(self.anchors.iter().take(index + 1).map(|a| a.layer).collect())
    }

    /// Same facts in canonical (sorted) order within each anchor.
    pub fn canonicalized(&self) -> AccessRequestPattern {
        let anchors = self
            .anchors
            .iter()
            .map(|a| {
                let mut facts = a.facts.clone();
                facts.sort();
                Anchor { layer: a.layer, facts }
            })
            .collect();
        AccessRequestPattern { anchors }
    }
}

impl fmt::Display for AccessRequestPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, anchor) in self.anchors.iter().enumerate() {
            if i > 0 {
                f.write_str(" -> ")?;
            }
            write!(f, "{}{{", anchor.layer)?;
            for (j, fact) in anchor.facts.iter().enumerate() {
                if j > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{}={}", fact.field, fact.value)?;
            }
            f.write_str("}")?;
        }
        Ok(())
    }
}

/// Layers from the request root down to an anchor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct AnchorPath(pub Vec<Layer>);

impl fmt::Display for AnchorPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(l.name())?;
        }
        f.write_str("]")
    }
}

fn eval_constraint(constraint: &Constraint, anchor: &Anchor, next: Option<&Anchor>) -> bool {
    match constraint {
        Constraint::FieldEquals { field, value } => {
            anchor.fact(*field) == Some(&Value::Uint(*value))
        }
        Constraint::NextLayer(layer) => next.map(|a| a.layer) == Some(*layer),
    }
}

fn match_chain(node: &PatternNode, anchors: &[Anchor]) -> bool {
    let PatternNode::Layer { layer, children } = node else {
        return false;
    };
    let Some((anchor, rest)) = anchors.split_first() else {
        return false;
    };
    if anchor.layer != *layer {
        return false;
    }
    children.iter().all(|child| match child {
        PatternNode::Layer { .. } => match_chain(child, rest),
        PatternNode::Constrained(c) => eval_constraint(c, anchor, rest.first()),
        PatternNode::Param(p) => anchor.fact(p.field).is_some_and(|v| p.operand.eval(v)),
    })
}

/// Matches `flow` with its root aligned to the request's outermost anchor.
pub fn match_at_root(
    flow: &FlowPattern,
    request: &AccessRequestPattern,
) -> Result<bool, PatternError> {
    flow.check_structure()?;
    Ok(match_chain(&flow.root, &request.anchors))
}

/// Tries [`match_at_root`] at every anchor, outermost first, and returns the
/// path of the first anchor that matches.
pub fn match_nested(
    flow: &FlowPattern,
    request: &AccessRequestPattern,
) -> Result<Option<AnchorPath>, PatternError> {
    flow.check_structure()?;
    Ok((0..request.anchors.len())
        .find(|&i| match_chain(&flow.root, &request.anchors[i..]))
        .map(|i| request.path_to(i)))
}

/// Whether the flow matches at any anchor. Structural errors count as no match.
pub fn matches(flow: &FlowPattern, request: &AccessRequestPattern) -> bool {
    matches!(match_nested(flow, request), Ok(Some(_)))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PredicateDescriptor {
    Hierarchy(Layer),
    Param(Predicate),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QualifiedPredicate {
    pub path: Vec<Layer>,
    pub predicate: PredicateDescriptor,
}

/// Set of predicates qualified by their anchor path, the domain of the
/// specificity order. Hierarchy-constrained predicates are omitted: they
/// are implied by the hierarchy entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct QualifiedPredicateSet(pub BTreeSet<QualifiedPredicate>);

impl QualifiedPredicateSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_superset(&self, other: &QualifiedPredicateSet) -> bool {
        self.0.is_superset(&other.0)
    }

    pub fn union(&self, other: &QualifiedPredicateSet) -> QualifiedPredicateSet {
        QualifiedPredicateSet(self.0.union(&other.0).cloned().collect())
    }
}

pub fn qualified_set(flow: &FlowPattern) -> QualifiedPredicateSet {
    fn walk(node: &PatternNode, path: &mut Vec<Layer>, out: &mut BTreeSet<QualifiedPredicate>) {
        match node {
            PatternNode::Layer { layer, children } => {
                path.push(*layer);
                out.insert(QualifiedPredicate {
                    path: path.clone(),
                    predicate: PredicateDescriptor::Hierarchy(*layer),
                });
                for child in children {
                    walk(child, path, out);
                }
                path.pop();
            }
            PatternNode::Param(p) => {
                out.insert(QualifiedPredicate {
                    path: path.clone(),
                    predicate: PredicateDescriptor::Param(Predicate::new(
                        p.field,
                        p.operand.clone(),
                    )),
                });
            }
            PatternNode::Constrained(_) => {}
        }
    }
    let mut out = BTreeSet::new();
    walk(&flow.root, &mut Vec::new(), &mut out);
    QualifiedPredicateSet(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Specificity {
    MoreSpecific,
    LessSpecific,
    Equal,
    Conflicting,
}

impl Specificity {
    pub fn from_sets(a: &QualifiedPredicateSet, b: &QualifiedPredicateSet) -> Specificity {
        match (a.is_superset(b), b.is_superset(a)) {
            (true, true) => Specificity::Equal,
            (true, false) => Specificity::MoreSpecific,
            (false, true) => Specificity::LessSpecific,
            (false, false) => Specificity::Conflicting,
        }
    }
}

/// Compares two patterns assumed to match the same request.
pub fn is_more_specific(a: &FlowPattern, b: &FlowPattern) -> Specificity {
    Specificity::from_sets(&qualified_set(a), &qualified_set(b))
}
