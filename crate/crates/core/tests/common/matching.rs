//! Brute-force flow matcher over flattened levels.

use rtsabac_core::pattern::{AccessRequestPattern, Anchor, Constraint, FlowPattern, Layer, Operand, PatternNode, Predicate, Prefix, Value};

/// One level of a linear flow pattern, flattened.
pub struct Level {
    pub layer: Layer,
    pub params: Vec<Predicate>,
    pub constraints: Vec<Constraint>,
}

pub fn flatten(flow: &FlowPattern) -> Vec<Level> {
    let mut out = Vec::new();
    let mut node = Some(flow.root());
    while let Some(PatternNode::Layer { layer, children }) = node {
        let mut level = Level { layer: *layer, params: vec![], constraints: vec![] };
        node = None;
        for c in children {
            match c {
                PatternNode::Param(p) => level.params.push(p.clone()),
                PatternNode::Constrained(k) => level.constraints.push(k.clone()),
                PatternNode::Layer { .. } => node = Some(c),
            }
        }
        out.push(level);
    }
    out
}

pub fn bit(bytes: &[u8], i: usize) -> bool {
    bytes[i / 8] & (0x80 >> (i % 8)) != 0
}

pub fn operand_holds(op: &Operand, v: &Value) -> bool {
    match (op, v) {
        (Operand::Eq(x), v) => x == v,
        (Operand::InSet(set), v) => set.iter().any(|x| x == v),
        (Operand::Prefix(Prefix::Mac(p)), Value::Mac(m)) => p.len() <= 6 && (0..p.len()).all(|i| p[i] == m[i]),
        (Operand::Prefix(Prefix::Ipv4 { addr, len }), Value::Ipv4(a)) => {
            (0..*len as usize).all(|i| bit(&addr.octets(), i) == bit(&a.octets(), i))
        }
        (Operand::Range(lo, hi), Value::Uint(x)) => *lo <= *x && *x <= *hi,
        _ => false,
    }
}

/// Enumerates every (predicate, fact) pair of each aligned level.
pub fn oracle_root(flow: &FlowPattern, anchors: &[Anchor]) -> bool {
    let levels = flatten(flow);
    if levels.len() > anchors.len() {
        return false;
    }
    levels.iter().enumerate().all(|(i, level)| {
        let anchor = &anchors[i];
        if anchor.layer != level.layer {
            return false;
        }
        let params = level.params.iter().all(|p| {
            let mut satisfied = false;
            for fact in &anchor.facts {
                if fact.field == p.field && operand_holds(&p.operand, &fact.value) {
                    satisfied = true;
                }
            }
            satisfied
        });
        let constraints = level.constraints.iter().all(|c| match c {
            Constraint::FieldEquals { field, value } => {
                anchor.facts.iter().any(|f| f.field == *field && f.value == Value::Uint(*value))
            }
            Constraint::NextLayer(l) => anchors.get(i + 1).map(|a| a.layer) == Some(*l),
        });
        params && constraints
    })
}

pub fn oracle_nested(flow: &FlowPattern, request: &AccessRequestPattern) -> Option<usize> {
    (0..request.anchors().len()).find(|&i| oracle_root(flow, &request.anchors()[i..]))
}

