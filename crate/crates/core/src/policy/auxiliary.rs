//! Auxiliary preconditions: attribute predicates, predicate trees and their
//! conjunctive form.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use super::attribute::{AttrType, AttrValue, BindingSet};
use crate::Timestamp;

/// Upper bound on distinct leaves per predicate tree.
pub const MAX_TREE_LEAVES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no binding for attribute '{0}'")]
    Missing(String),
    #[error("binding for attribute '{0}' is not valid at {1}")]
    Expired(String, Timestamp),
    #[error("attribute '{key}' holds {found}, cannot compare with {literal}")]
    TypeMismatch { key: String, found: AttrValue, literal: AttrValue },
}

/// `key <op> literal`.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub key: String,
    pub op: CmpOp,
    pub literal: AttrValue,
}

impl Comparison {
    pub fn new(key: &str, op: CmpOp, literal: AttrValue) -> Self {
        Comparison { key: key.to_string(), op, literal }
    }

    /// Whether the comparison is meaningful for an attribute of type `ty`.
    pub fn type_check(&self, ty: AttrType) -> Result<(), String> {
        let lit = self.literal.attr_type();
        let numeric = |t: AttrType| matches!(t, AttrType::Int | AttrType::Decimal);
        let compatible = lit == ty || (numeric(lit) && numeric(ty));
        if !compatible {
            return Err(format!("'{}' is {}, literal {} is {}", self.key, ty.name(), self.literal, lit.name()));
        }
        if self.op.is_ordering() && ty == AttrType::Bool {
            return Err(format!("operator {} does not apply to bool '{}'", self.op.symbol(), self.key));
        }
        Ok(())
    }

    pub fn eval(&self, value: &AttrValue) -> Result<bool, EvalError> {
        use AttrValue::*;
        let ord = match (value, &self.literal) {
            (Bool(a), Bool(b)) if !self.op.is_ordering() => a.cmp(b),
            (Int(a), Int(b)) => a.cmp(b),
            (Str(a), Str(b)) => a.cmp(b),
            (Int(_) | Decimal(_), Int(_) | Decimal(_)) => {
                let as_f64 = |v: &AttrValue| match v {
                    Int(i) => *i as f64,
                    Decimal(d) => *d,
                    _ => unreachable!(),
                };
                match as_f64(value).partial_cmp(&as_f64(&self.literal)) {
                    Some(o) => o,
                    None => return Ok(self.op == CmpOp::Ne),
                }
            }
            _ => {
                return Err(EvalError::TypeMismatch {
                    key: self.key.clone(),
                    found: value.clone(),
                    literal: self.literal.clone(),
                })
            }
        };
        Ok(self.op.holds(ord))
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.key, self.op.symbol(), self.literal)
    }
}

/// Body of an auxiliary predicate.
#[derive(Debug, Clone, PartialEq)]
pub enum AuxExpr {
    Compare(Comparison),
    Not(Box<AuxExpr>),
    /// Disjunction.
    Any(Vec<AuxExpr>),
}

impl AuxExpr {
    fn collect_keys(&self, out: &mut BTreeSet<String>) {
        match self {
            AuxExpr::Compare(c) => {
                out.insert(c.key.clone());
            }
            AuxExpr::Not(inner) => inner.collect_keys(out),
            AuxExpr::Any(items) => items.iter().for_each(|i| i.collect_keys(out)),
        }
    }

    pub fn comparisons(&self) -> Vec<&Comparison> {
        match self {
            AuxExpr::Compare(c) => vec![c],
            AuxExpr::Not(inner) => inner.comparisons(),
            AuxExpr::Any(items) => items.iter().flat_map(|i| i.comparisons()).collect(),
        }
    }

    /// Evaluates every comparison so that type errors surface regardless of
    /// short-circuiting.
    pub fn eval(&self, bindings: &BindingSet) -> Result<bool, EvalError> {
        match self {
            AuxExpr::Compare(c) => {
                let b = bindings.get(&c.key).ok_or_else(|| EvalError::Missing(c.key.clone()))?;
                c.eval(&b.value)
            }
            AuxExpr::Not(inner) => Ok(!inner.eval(bindings)?),
            AuxExpr::Any(items) => {
                let mut any = false;
                for item in items {
                    any |= item.eval(bindings)?;
                }
                Ok(any)
            }
        }
    }
}

impl fmt::Display for AuxExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuxExpr::Compare(c) => write!(f, "{c}"),
            AuxExpr::Not(inner) => write!(f, "!({inner})"),
            AuxExpr::Any(items) => {
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" || ")?;
                    }
                    match item {
                        AuxExpr::Any(_) => write!(f, "({item})")?,
                        _ => write!(f, "{item}")?,
                    }
                }
                Ok(())
            }
        }
    }
}

/// Named boolean function over system attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryPredicate {
    pub id: String,
    pub expr: AuxExpr,
}

impl AuxiliaryPredicate {
    pub fn new(id: &str, expr: AuxExpr) -> Self {
        AuxiliaryPredicate { id: id.to_string(), expr }
    }

    pub fn compare(id: &str, key: &str, op: CmpOp, literal: AttrValue) -> Self {
        Self::new(id, AuxExpr::Compare(Comparison::new(key, op, literal)))
    }

    /// The attribute set this predicate needs.
    pub fn required_keys(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.expr.collect_keys(&mut out);
        out
    }
}

/// Union of the attributes required by a predicate set.
pub fn required_keys<'a>(predicates: impl IntoIterator<Item = &'a AuxiliaryPredicate>) -> BTreeSet<String> {
    predicates.into_iter().flat_map(|p| p.required_keys()).collect()
}

/// Conjunction of `predicates` over `bindings`. Every required attribute
/// must be bound and valid at `now`; the empty set is `true`.
pub fn evaluate_auxiliary(
    predicates: &[AuxiliaryPredicate],
    bindings: &BindingSet,
    now: Timestamp,
) -> Result<bool, EvalError> {
    for key in required_keys(predicates) {
        let b = bindings.get(&key).ok_or_else(|| EvalError::Missing(key.clone()))?;
        if !b.is_valid_at(now) {
            return Err(EvalError::Expired(key, now));
        }
    }
    let mut all = true;
    for p in predicates {
        all &= p.expr.eval(bindings)?;
    }
    Ok(all)
}

/// Boolean expression tree over auxiliary predicates.
#[derive(Debug, Clone, PartialEq)]
pub enum PredicateTree {
    Leaf(AuxiliaryPredicate),
    Not(Box<PredicateTree>),
    And(Box<PredicateTree>, Box<PredicateTree>),
    Or(Box<PredicateTree>, Box<PredicateTree>),
    Xor(Box<PredicateTree>, Box<PredicateTree>),
}

impl PredicateTree {
    pub fn leaf(p: AuxiliaryPredicate) -> Self {
        PredicateTree::Leaf(p)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(t: PredicateTree) -> Self {
        PredicateTree::Not(Box::new(t))
    }

    pub fn and(a: PredicateTree, b: PredicateTree) -> Self {
        PredicateTree::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: PredicateTree, b: PredicateTree) -> Self {
        PredicateTree::Or(Box::new(a), Box::new(b))
    }

    pub fn xor(a: PredicateTree, b: PredicateTree) -> Self {
        PredicateTree::Xor(Box::new(a), Box::new(b))
    }

    /// Distinct leaves by id, in first-appearance order.
    pub fn leaves(&self) -> Vec<&AuxiliaryPredicate> {
        fn walk<'a>(t: &'a PredicateTree, seen: &mut BTreeSet<&'a str>, out: &mut Vec<&'a AuxiliaryPredicate>) {
            match t {
                PredicateTree::Leaf(p) => {
                    if seen.insert(&p.id) {
                        out.push(p);
                    }
                }
                PredicateTree::Not(a) => walk(a, seen, out),
                PredicateTree::And(a, b) | PredicateTree::Or(a, b) | PredicateTree::Xor(a, b) => {
                    walk(a, seen, out);
                    walk(b, seen, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut BTreeSet::new(), &mut out);
        out
    }

    /// Whether the tree is a plain conjunction of leaves.
    pub fn is_conjunction(&self) -> bool {
        match self {
            PredicateTree::Leaf(_) => true,
            PredicateTree::And(a, b) => a.is_conjunction() && b.is_conjunction(),
            _ => false,
        }
    }

    /// Problems that make the tree unusable: too many leaves for a tree that
    /// needs distribution, or one id bound to different definitions.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let leaves = self.leaves();
        if leaves.len() > MAX_TREE_LEAVES && !self.is_conjunction() {
            out.push(format!("predicate tree has {} leaves, limit is {MAX_TREE_LEAVES}", leaves.len()));
        }
        let mut defs: BTreeMap<&str, &AuxExpr> = BTreeMap::new();
        fn walk<'a>(t: &'a PredicateTree, defs: &mut BTreeMap<&'a str, &'a AuxExpr>, out: &mut Vec<String>) {
            match t {
                PredicateTree::Leaf(p) => match defs.get(p.id.as_str()) {
                    Some(e) if **e != p.expr => out.push(format!("conflicting definitions of '{}'", p.id)),
                    Some(_) => {}
                    None => {
                        defs.insert(&p.id, &p.expr);
                    }
                },
                PredicateTree::Not(a) => walk(a, defs, out),
                PredicateTree::And(a, b) | PredicateTree::Or(a, b) | PredicateTree::Xor(a, b) => {
                    walk(a, defs, out);
                    walk(b, defs, out);
                }
            }
        }
        walk(self, &mut defs, &mut out);
        out
    }

    /// Evaluates with a truth assignment for each leaf id.
    pub fn eval_with(&self, assignment: &dyn Fn(&str) -> bool) -> bool {
        match self {
            PredicateTree::Leaf(p) => assignment(&p.id),
            PredicateTree::Not(a) => !a.eval_with(assignment),
            PredicateTree::And(a, b) => a.eval_with(assignment) && b.eval_with(assignment),
            PredicateTree::Or(a, b) => a.eval_with(assignment) || b.eval_with(assignment),
            PredicateTree::Xor(a, b) => a.eval_with(assignment) != b.eval_with(assignment),
        }
    }
}

/// (leaf index, negated)
type Literal = (usize, bool);
type Clause = BTreeSet<Literal>;

enum Nnf {
    Lit(Literal),
    And(Vec<Nnf>),
    Or(Vec<Nnf>),
}

fn to_nnf(tree: &PredicateTree, negated: bool, index: &BTreeMap<&str, usize>) -> Nnf {
    match tree {
        PredicateTree::Leaf(p) => Nnf::Lit((index[p.id.as_str()], negated)),
        PredicateTree::Not(a) => to_nnf(a, !negated, index),
        PredicateTree::And(a, b) if !negated => Nnf::And(vec![to_nnf(a, false, index), to_nnf(b, false, index)]),
        PredicateTree::And(a, b) => Nnf::Or(vec![to_nnf(a, true, index), to_nnf(b, true, index)]),
        PredicateTree::Or(a, b) if !negated => Nnf::Or(vec![to_nnf(a, false, index), to_nnf(b, false, index)]),
        PredicateTree::Or(a, b) => Nnf::And(vec![to_nnf(a, true, index), to_nnf(b, true, index)]),
        // a ^ b  = (a | b) & (!a | !b);  !(a ^ b) = (a | !b) & (!a | b)
        PredicateTree::Xor(a, b) => Nnf::And(vec![
            Nnf::Or(vec![to_nnf(a, false, index), to_nnf(b, negated, index)]),
            Nnf::Or(vec![to_nnf(a, true, index), to_nnf(b, !negated, index)]),
        ]),
    }
}

fn simplify(clauses: Vec<Clause>) -> Vec<Clause> {
    let mut kept: Vec<Clause> = clauses
        .into_iter()
        .filter(|c| !c.iter().any(|(i, neg)| c.contains(&(*i, !neg))))
        .collect();
    kept.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    kept.dedup();
    let mut out: Vec<Clause> = Vec::with_capacity(kept.len());
    for c in kept {
        if !out.iter().any(|small| small.is_subset(&c)) {
            out.push(c);
        }
    }
    out
}

fn to_clauses(nnf: &Nnf) -> Vec<Clause> {
    match nnf {
        Nnf::Lit(l) => vec![Clause::from([*l])],
        Nnf::And(items) => simplify(items.iter().flat_map(to_clauses).collect()),
        Nnf::Or(items) => {
            let mut acc: Vec<Clause> = vec![Clause::new()];
            for item in items {
                let rhs = to_clauses(item);
                let mut next = Vec::with_capacity(acc.len() * rhs.len());
                for l in &acc {
                    for r in &rhs {
                        next.push(l.union(r).copied().collect());
                    }
                }
                acc = simplify(next);
            }
            acc
        }
    }
}

fn negated_id(id: &str) -> String {
    format!("not-{id}")
}

/// Converts a predicate tree to an equivalent conjunction of atomic
/// predicates: CNF by distribution, then each multi-literal clause merged
/// into one disjunctive predicate.
pub fn to_conjunctive_form(tree: &PredicateTree) -> Vec<AuxiliaryPredicate> {
    let leaves = tree.leaves();
    let index: BTreeMap<&str, usize> = leaves.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    let mut clauses = to_clauses(&to_nnf(tree, false, &index));
    clauses.sort();
    let literal = |&(i, neg): &Literal| -> (String, AuxExpr) {
        let leaf = leaves[i];
        if neg {
            (negated_id(&leaf.id), AuxExpr::Not(Box::new(leaf.expr.clone())))
        } else {
            (leaf.id.clone(), leaf.expr.clone())
        }
    };
    clauses
        .iter()
        .map(|clause| {
            if let [only] = clause.iter().collect::<Vec<_>>()[..] {
                let (id, expr) = literal(only);
                return AuxiliaryPredicate { id, expr };
            }
            let (ids, exprs): (Vec<String>, Vec<AuxExpr>) = clause.iter().map(literal).unzip();
            AuxiliaryPredicate { id: ids.join("-or-"), expr: AuxExpr::Any(exprs) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::attribute::{binding_set, AttributeBinding};

    fn leaf(id: &str) -> PredicateTree {
        PredicateTree::leaf(AuxiliaryPredicate::compare(id, id, CmpOp::Eq, AttrValue::Bool(true)))
    }

    fn ids(preds: &[AuxiliaryPredicate]) -> Vec<&str> {
        preds.iter().map(|p| p.id.as_str()).collect()
    }

    #[test]
    fn and_of_or_merges_disjunction() {
        let t = PredicateTree::and(leaf("a1"), PredicateTree::or(leaf("a2"), leaf("a3")));
        let cnf = to_conjunctive_form(&t);
        assert_eq!(ids(&cnf), vec!["a1", "a2-or-a3"]);
        assert_eq!(cnf[1].required_keys(), BTreeSet::from(["a2".to_string(), "a3".to_string()]));
    }

    #[test]
    fn single_leaf_is_unchanged() {
        let t = leaf("a1");
        let cnf = to_conjunctive_form(&t);
        assert_eq!(cnf.len(), 1);
        let PredicateTree::Leaf(p) = &t else { unreachable!() };
        assert_eq!(&cnf[0], p);
    }

    #[test]
    fn xor_yields_two_clauses() {
        let cnf = to_conjunctive_form(&PredicateTree::xor(leaf("a1"), leaf("a2")));
        assert_eq!(ids(&cnf), vec!["a1-or-a2", "not-a1-or-not-a2"]);
    }

    #[test]
    fn tautology_is_empty_conjunction() {
        let cnf = to_conjunctive_form(&PredicateTree::or(leaf("a"), PredicateTree::not(leaf("a"))));
        assert!(cnf.is_empty());
    }

    #[test]
    fn conjunction_semantics() {
        let now = Timestamp(1000);
        let b = |v: i64| binding_set([AttributeBinding::new("x", AttrValue::Int(v), Timestamp(0), Timestamp(2000))]);
        let a1 = AuxiliaryPredicate::compare("a1", "x", CmpOp::Eq, AttrValue::Int(3));
        assert_eq!(evaluate_auxiliary(&[], &BindingSet::new(), now), Ok(true));
        assert_eq!(evaluate_auxiliary(&[a1.clone()], &b(3), now), Ok(true));
        assert_eq!(evaluate_auxiliary(&[a1.clone()], &b(4), now), Ok(false));
        let a2 = AuxiliaryPredicate::compare("a2", "x", CmpOp::Gt, AttrValue::Int(3));
        assert_eq!(evaluate_auxiliary(&[a1.clone(), a2], &b(3), now), Ok(false));
        assert_eq!(evaluate_auxiliary(&[a1.clone()], &BindingSet::new(), now), Err(EvalError::Missing("x".into())));
        assert!(matches!(evaluate_auxiliary(&[a1], &b(3), Timestamp(2001)), Err(EvalError::Expired(..))));
    }

    #[test]
    fn comparison_typing() {
        let c = Comparison::new("mode", CmpOp::Eq, AttrValue::Str("normal".into()));
        assert!(c.type_check(AttrType::Str).is_ok());
        assert!(c.type_check(AttrType::Int).is_err());
        assert!(matches!(c.eval(&AttrValue::Int(1)), Err(EvalError::TypeMismatch { .. })));
        let lt = Comparison::new("load", CmpOp::Lt, AttrValue::Decimal(10.5));
        assert_eq!(lt.eval(&AttrValue::Int(10)), Ok(true));
        assert!(Comparison::new("b", CmpOp::Lt, AttrValue::Bool(true)).type_check(AttrType::Bool).is_err());
    }

    #[test]
    fn tree_validation() {
        let mut t = leaf("l0");
        for i in 1..13 {
            t = PredicateTree::and(t, leaf(&format!("l{i}")));
        }
        assert!(t.validate().is_empty());
        assert_eq!(PredicateTree::not(t).validate().len(), 1);
        let clash = PredicateTree::and(
            leaf("a"),
            PredicateTree::leaf(AuxiliaryPredicate::compare("a", "z", CmpOp::Eq, AttrValue::Int(1))),
        );
        assert_eq!(clash.validate(), vec!["conflicting definitions of 'a'".to_string()]);
    }
}
